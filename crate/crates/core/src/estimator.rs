//! Regression data assembly and the OLS / quadratic-loss SVR estimators of
//! `[A B]`, plus the dual quadratic program used as an independent check of
//! the closed-form SVR solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti_sim::{RolloutSet, SystemMatrices};
use crate::numerics::linalg::{cholesky_solve, rcond, symmetric_eigenvalues};
use crate::numerics::{Matrix, SolverTolerances};

/// Gram matrices with a reciprocal condition number below this are rejected.
pub const SINGULAR_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Assembly {
    /// Pairs `k = 2..T0` of every rollout, `N₀ = (T0 − 1) N` columns.
    #[serde(rename = "ALL_DATA")]
    AllData,
    /// Only the last pair `k = T0` of every rollout, `N` columns.
    #[serde(rename = "FINAL_DATA")]
    FinalData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorMode {
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "SVR")]
    Svr,
    #[serde(rename = "SVR_SCALED")]
    SvrScaled,
}

/// How the SVR penalty `γ` enters the normal equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scaling {
    /// `γ′ = γ`.
    #[serde(rename = "RAW")]
    Raw,
    /// `γ′ = γ · trace(z zᵀ) / (n + m)`.
    #[serde(rename = "GRAM_SCALED")]
    GramScaled,
}

impl Scaling {
    pub fn mode(self) -> EstimatorMode {
        match self {
            Scaling::Raw => EstimatorMode::Svr,
            Scaling::GramScaled => EstimatorMode::SvrScaled,
        }
    }
}

/// Regressors `z` (columns `[x_{k−1}; u_{k−1}]`) and targets `f` (columns `x_k`).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub z: Matrix,
    pub f: Matrix,
    pub n: usize,
    pub m: usize,
    pub n0: usize,
    pub assembly: Assembly,
}

impl RegressionData {
    pub fn new(z: Matrix, f: Matrix, n: usize, m: usize, assembly: Assembly) -> Result<Self> {
        if z.rows() != n + m || f.rows() != n || z.cols() != f.cols() {
            return Err(Error::DimensionMismatch(format!(
                "regression data z {:?}, f {:?} for n = {n}, m = {m}",
                z.shape(),
                f.shape()
            )));
        }
        let n0 = z.cols();
        Ok(Self { z, f, n, m, n0, assembly })
    }

    /// `z zᵀ`, the `(n+m) × (n+m)` Gram matrix.
    pub fn gram(&self) -> Matrix {
        &self.z * &self.z.transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Estimate {
    pub mode: EstimatorMode,
    pub gamma: f64,
    pub assembly: Assembly,
    pub a_hat: Matrix,
    pub b_hat: Matrix,
}

impl Estimate {
    pub fn n(&self) -> usize {
        self.a_hat.rows()
    }

    pub fn m(&self) -> usize {
        self.b_hat.cols()
    }

    /// `[Ã B̃]` as one `n × (n+m)` matrix.
    pub fn stacked(&self) -> Matrix {
        self.a_hat.hstack(&self.b_hat).expect("estimate blocks share row count")
    }
}

pub fn assemble_regression_data(data: &RolloutSet, mode: Assembly) -> Result<RegressionData> {
    data.validate()?;
    let (n, m) = data.dims();
    let ks: Vec<usize> = match mode {
        Assembly::AllData => (2..=data.t0).collect(),
        Assembly::FinalData => vec![data.t0],
    };
    let n0 = ks.len() * data.n_rollouts();
    if n0 == 0 {
        return Err(Error::EmptyData);
    }
    let mut z = Matrix::zeros(n + m, n0);
    let mut f = Matrix::zeros(n, n0);
    let mut col = 0;
    for r in &data.rollouts {
        for &k in &ks {
            let (x_prev, u_prev, x_next) = (&r.states[k - 1], &r.inputs[k - 1], &r.states[k]);
            for (i, v) in x_prev.iter().chain(u_prev).enumerate() {
                z[(i, col)] = *v;
            }
            for (i, v) in x_next.iter().enumerate() {
                f[(i, col)] = *v;
            }
            col += 1;
        }
    }
    if !z.is_finite() || !f.is_finite() {
        return Err(Error::InvalidMatrix("rollout data contains non-finite values".into()));
    }
    RegressionData::new(z, f, n, m, mode)
}

/// Solves `W (g) = f zᵀ` with `g = z zᵀ + ridge·I`, rejecting ill-conditioned `g`.
fn regularized_fit(data: &RegressionData, ridge: f64) -> Result<(Matrix, Matrix)> {
    let mut g = data.gram();
    for i in 0..g.rows() {
        g[(i, i)] += ridge;
    }
    let rc = rcond(&g);
    if rc.is_nan() || rc < SINGULAR_RCOND {
        return Err(Error::SingularGram { rcond: rc });
    }
    let zft = &data.z * &data.f.transpose();
    let wt = cholesky_solve(&g, &zft).map_err(|_| Error::SingularGram { rcond: rc })?;
    let w = wt.transpose();
    Ok((w.columns(0, data.n), w.columns(data.n, data.n + data.m)))
}

/// `[Ã B̃] = f zᵀ (z zᵀ)⁻¹`.
pub fn estimate_ols(data: &RegressionData) -> Result<Estimate> {
    let (a_hat, b_hat) = regularized_fit(data, 0.0)?;
    Ok(Estimate { mode: EstimatorMode::Ols, gamma: 0.0, assembly: data.assembly, a_hat, b_hat })
}

/// The ridge parameter `γ′` actually added to the Gram diagonal.
pub fn effective_ridge(data: &RegressionData, gamma: f64, scaling: Scaling) -> f64 {
    match scaling {
        Scaling::Raw => gamma,
        Scaling::GramScaled => gamma * data.gram().trace() / (data.n + data.m) as f64,
    }
}

/// `[Ã B̃] = f zᵀ (γ′ I + z zᵀ)⁻¹`, all rows at once.
pub fn estimate_svr(data: &RegressionData, gamma: f64, scaling: Scaling) -> Result<Estimate> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidParameter(format!("SVR gamma must be finite and >= 0, got {gamma}")));
    }
    let (a_hat, b_hat) = regularized_fit(data, effective_ridge(data, gamma, scaling))?;
    Ok(Estimate { mode: scaling.mode(), gamma, assembly: data.assembly, a_hat, b_hat })
}

/// Dual solution for one output row.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub w_row: Vec<f64>,
    pub iterations: usize,
}

/// Maximizes `−½ αᵀ (zᵀz + γI) α + f_i α` by gradient ascent and returns
/// `w = z α`. The multipliers are unconstrained, so the projection step is
/// the identity.
pub fn solve_dual_qp(data: &RegressionData, row: usize, gamma: f64, tol: &SolverTolerances) -> Result<DualSolution> {
    if row >= data.n {
        return Err(Error::DimensionMismatch(format!("row {row} out of range for n = {}", data.n)));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("dual QP needs gamma > 0, got {gamma}")));
    }
    let lipschitz = symmetric_eigenvalues(&data.gram(), 200)?[0].max(0.0) + gamma;
    let step = 1.0 / (lipschitz * (1.0 + 1e-9) + f64::EPSILON);
    let target = data.f.row(row);
    let zt = data.z.transpose();
    let mut alpha = vec![0.0; data.n0];
    for it in 0..=tol.max_iters {
        let w = data.z.mul_vec(&alpha);
        let ztw = zt.mul_vec(&w);
        let grad: Vec<f64> =
            (0..data.n0).map(|j| target[j] - ztw[j] - gamma * alpha[j]).collect();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return Ok(DualSolution { alpha, w_row: w, iterations: it });
        }
        for (a, g) in alpha.iter_mut().zip(&grad) {
            *a += step * g;
        }
    }
    Err(Error::NonConvergence { what: "dual QP gradient ascent", iters: tol.max_iters })
}

/// Root mean square entrywise error of `Ã` and `B̃`.
pub fn rmse(est: &Estimate, truth: &SystemMatrices) -> Result<(f64, f64)> {
    if est.a_hat.shape() != truth.a.shape() || est.b_hat.shape() != truth.b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "estimate {:?}/{:?} vs truth {:?}/{:?}",
            est.a_hat.shape(),
            est.b_hat.shape(),
            truth.a.shape(),
            truth.b.shape()
        )));
    }
    let r = |hat: &Matrix, t: &Matrix| {
        let d = hat - t;
        d.frobenius_norm() / ((d.rows() * d.cols()) as f64).sqrt()
    };
    Ok((r(&est.a_hat, &truth.a), r(&est.b_hat, &truth.b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti_sim::{collect_rollouts, step, NoiseSpec};

    fn scalar_data(z: &[f64], f: &[f64]) -> RegressionData {
        // n = 1, m = 0: one target regressed on a single regressor.
        RegressionData {
            z: Matrix::new(1, z.len(), z.to_vec()).unwrap(),
            f: Matrix::new(1, f.len(), f.to_vec()).unwrap(),
            n: 1,
            m: 0,
            n0: z.len(),
            assembly: Assembly::AllData,
        }
    }

    #[test]
    fn assembly_counts() {
        let sys = SystemMatrices::stable_benchmark();
        let set = collect_rollouts(&sys, &NoiseSpec::default(), 10, 11, 1).unwrap();
        let all = assemble_regression_data(&set, Assembly::AllData).unwrap();
        assert_eq!(all.n0, 100);
        assert_eq!(all.z.shape(), (4, 100));
        let set = collect_rollouts(&sys, &NoiseSpec::default(), 5, 2, 1).unwrap();
        assert_eq!(assemble_regression_data(&set, Assembly::FinalData).unwrap().n0, 5);
    }

    #[test]
    fn assembled_columns_replay_through_dynamics() {
        let sys = SystemMatrices::stable_benchmark();
        let noise = NoiseSpec { sigma_w: 0.0, sigma_v: 0.0, sigma_u: 1.0 };
        let set = collect_rollouts(&sys, &noise, 4, 6, 3).unwrap();
        let d = assemble_regression_data(&set, Assembly::AllData).unwrap();
        for c in 0..d.n0 {
            let col: Vec<f64> = (0..4).map(|i| d.z[(i, c)]).collect();
            let next = step(&sys, &col[..3], &col[3..], &[0.0; 3]).unwrap();
            let stored: Vec<f64> = (0..3).map(|i| d.f[(i, c)]).collect();
            assert_eq!(next, stored);
            assert!(col.iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn noiseless_ols_recovers_truth() {
        let sys = SystemMatrices::stable_benchmark();
        let noise = NoiseSpec { sigma_w: 0.0, sigma_v: 0.0, sigma_u: 1.0 };
        let set = collect_rollouts(&sys, &noise, 3, 11, 5).unwrap();
        let est = estimate_ols(&assemble_regression_data(&set, Assembly::AllData).unwrap()).unwrap();
        assert!((&est.a_hat - &sys.a).max_abs() < 1e-8);
        assert!((&est.b_hat - &sys.b).max_abs() < 1e-8);
        let (ra, rb) = rmse(&est, &sys).unwrap();
        assert!(ra < 1e-8 && rb < 1e-8);
    }

    #[test]
    fn scalar_closed_forms() {
        let one = scalar_data(&[1.0], &[0.5]);
        assert!((estimate_ols(&one).unwrap().a_hat[(0, 0)] - 0.5).abs() < 1e-15);
        let d = scalar_data(&[1.0], &[1.0]);
        assert!((estimate_svr(&d, 1.0, Scaling::Raw).unwrap().a_hat[(0, 0)] - 0.5).abs() < 1e-15);
        let two = scalar_data(&[1.0, 1.0], &[1.0, 1.0]);
        let raw = estimate_svr(&two, 1.0, Scaling::Raw).unwrap();
        assert!((raw.a_hat[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(effective_ridge(&two, 1.0, Scaling::GramScaled), 2.0);
        let scaled = estimate_svr(&two, 1.0, Scaling::GramScaled).unwrap();
        assert!((scaled.a_hat[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(scaled.mode, EstimatorMode::SvrScaled);
    }

    #[test]
    fn singular_gram_is_rejected() {
        let z = Matrix::zeros(4, 6);
        let d = RegressionData::new(z, Matrix::zeros(3, 6), 3, 1, Assembly::AllData).unwrap();
        assert!(matches!(estimate_ols(&d), Err(Error::SingularGram { .. })));
    }

    #[test]
    fn vanishing_gamma_matches_ols() {
        let sys = SystemMatrices::stable_benchmark();
        let set = collect_rollouts(&sys, &NoiseSpec::default(), 20, 11, 8).unwrap();
        let d = assemble_regression_data(&set, Assembly::AllData).unwrap();
        let ols = estimate_ols(&d).unwrap().stacked();
        let gap = |g: f64| (&estimate_svr(&d, g, Scaling::Raw).unwrap().stacked() - &ols).frobenius_norm();
        let (coarse, fine) = (gap(1e-6), gap(1e-9));
        assert!(coarse < 1e-6 && fine < 1e-9 && fine < coarse, "{coarse} {fine}");
        let tiny = estimate_svr(&d, 1e-12, Scaling::Raw).unwrap().stacked();
        assert!((&tiny - &ols).max_abs() < 1e-10);
    }

    #[test]
    fn dual_matches_primal() {
        let sys = SystemMatrices::unstable_benchmark();
        let set = collect_rollouts(&sys, &NoiseSpec::default(), 4, 5, 2).unwrap();
        let d = assemble_regression_data(&set, Assembly::AllData).unwrap();
        let primal = estimate_svr(&d, 0.5, Scaling::Raw).unwrap().stacked();
        for row in 0..3 {
            let dual = solve_dual_qp(&d, row, 0.5, &SolverTolerances::default()).unwrap();
            for (j, w) in dual.w_row.iter().enumerate() {
                assert!((w - primal[(row, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dual_zero_target_and_scalar() {
        let d = scalar_data(&[1.0, -2.0], &[0.0, 0.0]);
        let sol = solve_dual_qp(&d, 0, 1.0, &SolverTolerances::default()).unwrap();
        assert!(sol.alpha.iter().all(|a| *a == 0.0));
        assert_eq!(sol.w_row, vec![0.0]);
        let d = scalar_data(&[1.0], &[1.0]);
        let sol = solve_dual_qp(&d, 0, 1.0, &SolverTolerances::default()).unwrap();
        assert!((sol.w_row[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn rmse_uniform_offset() {
        let sys = SystemMatrices::stable_benchmark();
        let est = Estimate {
            mode: EstimatorMode::Ols,
            gamma: 0.0,
            assembly: Assembly::AllData,
            a_hat: &sys.a + &Matrix::filled(3, 3, -0.25),
            b_hat: sys.b.clone(),
        };
        let (ra, rb) = rmse(&est, &sys).unwrap();
        assert!((ra - 0.25).abs() < 1e-15);
        assert_eq!(rb, 0.0);
    }

    #[test]
    fn estimate_json_shape() {
        let est = Estimate {
            mode: EstimatorMode::Svr,
            gamma: 0.05,
            assembly: Assembly::FinalData,
            a_hat: Matrix::identity(2),
            b_hat: Matrix::column(&[1.0, 2.0]),
        };
        let text = serde_json::to_string(&est).unwrap();
        assert_eq!(
            text,
            r#"{"mode":"SVR","gamma":0.05,"assembly":"FINAL_DATA","a_hat":[[1.0,0.0],[0.0,1.0]],"b_hat":[[1.0],[2.0]]}"#
        );
        let back: Estimate = serde_json::from_str(&text).unwrap();
        assert_eq!(back, est);
    }
}
