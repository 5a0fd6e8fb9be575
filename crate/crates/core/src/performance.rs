//! Observer performance: Monte Carlo mean-square observation error, H2 and
//! H∞ norms of stable transfer matrices, and the analytic upper bounds on the
//! observation cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Estimate;
use crate::lti_sim::{NoiseSpec, RngStream, SystemMatrices};
use crate::numerics::linalg::Lu;
use crate::numerics::{solve_discrete_lyapunov, spectral_norm, spectral_radius, Matrix, SolverTolerances};

/// Number of batches used for the batch-means standard error.
pub const BATCHES: usize = 20;
/// Uniform frequency grid size on `[0, π]` for the H∞ search.
pub const HINF_GRID: usize = 4096;

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Compensated sum of a slice in index order.
pub fn kahan_sum(values: &[f64]) -> f64 {
    let mut acc = KahanSum::default();
    values.iter().for_each(|v| acc.add(*v));
    acc.value()
}

/// Sample mean and unbiased variance, both compensated.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = kahan_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, kahan_sum(&sq) / (n - 1) as f64)
}

/// True system, identified model, observer gain and noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverLoop {
    pub truth: SystemMatrices,
    pub est: Estimate,
    pub gain: Matrix,
    pub noise: NoiseSpec,
}

impl ObserverLoop {
    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        self.noise.validate()?;
        let (n, m, p) = (self.truth.n(), self.truth.m(), self.truth.p());
        if self.est.a_hat.shape() != (n, n) || self.est.b_hat.shape() != (n, m) || self.gain.shape() != (n, p) {
            return Err(Error::DimensionMismatch(format!(
                "observer loop: estimate {:?}/{:?} and gain {:?} vs system (n, m, p) = ({n}, {m}, {p})",
                self.est.a_hat.shape(),
                self.est.b_hat.shape(),
                self.gain.shape()
            )));
        }
        Ok(())
    }

    /// `A − LC` with the true `A`.
    pub fn true_error_dynamics(&self) -> Matrix {
        &self.truth.a - &(&self.gain * &self.truth.c)
    }

    /// `Ã − LC`, which drives the simulated estimation error.
    pub fn model_error_dynamics(&self) -> Matrix {
        &self.est.a_hat - &(&self.gain * &self.truth.c)
    }
}

/// Monte Carlo estimate of the mean-square observation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutcome {
    pub j_hat: f64,
    pub stderr: f64,
}

/// Runs the true system and the observer
/// `x̃⁺ = Ãx̃ + B̃u + L(y − Cx̃)` side by side from `x₀ = x̃₀ = 0` and averages
/// `‖x̃_k − x_k‖²` over `burn_in < k ≤ horizon`.
pub fn simulate_observer(
    lp: &ObserverLoop,
    horizon: usize,
    burn_in: usize,
    stream: &RngStream,
    tol: &SolverTolerances,
) -> Result<SimulationOutcome> {
    lp.validate()?;
    if horizon < 10 * burn_in || horizon <= burn_in + BATCHES {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} must be at least 10 x burn-in ({burn_in}) and exceed burn-in by {BATCHES} samples"
        )));
    }
    let rho = spectral_radius(&lp.true_error_dynamics(), tol)?.max(spectral_radius(&lp.model_error_dynamics(), tol)?);
    if rho >= 1.0 {
        return Err(Error::UnstableLoop { rho });
    }

    let sys = &lp.truth;
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    let mut u_stream = stream.derive(0);
    let mut w_stream = stream.derive(1);
    let mut v_stream = stream.derive(2);
    let mut x = vec![0.0; n];
    let mut xt = vec![0.0; n];
    let count = horizon - burn_in;
    let mut errors = Vec::with_capacity(count);
    for k in 0..=horizon {
        if k > burn_in {
            errors.push(xt.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        }
        if k == horizon {
            break;
        }
        let u = u_stream.gaussian_vector(m, lp.noise.sigma_u);
        let w = w_stream.gaussian_vector(n, lp.noise.sigma_w);
        let v = v_stream.gaussian_vector(p, lp.noise.sigma_v);
        let innovation: Vec<f64> = sys.c.mul_vec(&x).iter().zip(&v).zip(sys.c.mul_vec(&xt)).map(|((cx, v), cxt)| cx + v - cxt).collect();
        let correction = lp.gain.mul_vec(&innovation);
        let at = lp.est.a_hat.mul_vec(&xt);
        let bt = lp.est.b_hat.mul_vec(&u);
        let ax = sys.a.mul_vec(&x);
        let bx = sys.b.mul_vec(&u);
        for i in 0..n {
            xt[i] = at[i] + bt[i] + correction[i];
            x[i] = ax[i] + bx[i] + w[i];
        }
    }
    let (j_hat, _) = mean_and_variance(&errors);
    let batch_means: Vec<f64> = (0..BATCHES)
        .map(|b| {
            let (lo, hi) = (b * count / BATCHES, (b + 1) * count / BATCHES);
            kahan_sum(&errors[lo..hi]) / (hi - lo) as f64
        })
        .collect();
    let (_, batch_var) = mean_and_variance(&batch_means);
    let stderr = (batch_var / BATCHES as f64).sqrt();
    if !j_hat.is_finite() || !stderr.is_finite() {
        return Err(Error::UnstableDynamics { rho: spectral_radius(&sys.a, tol)? });
    }
    Ok(SimulationOutcome { j_hat, stderr })
}

/// `c_out (zI − a_cl)⁻¹ b_in + d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    pub a_cl: Matrix,
    pub b_in: Matrix,
    pub c_out: Matrix,
    pub d: Option<Matrix>,
}

impl TransferSpec {
    /// State-to-state response with identity output map.
    pub fn new(a_cl: Matrix, b_in: Matrix) -> Result<Self> {
        let n = a_cl.rows();
        Self::with_output(a_cl, b_in, Matrix::identity(n), None)
    }

    pub fn with_output(a_cl: Matrix, b_in: Matrix, c_out: Matrix, d: Option<Matrix>) -> Result<Self> {
        let n = a_cl.rows();
        let shapes_ok = a_cl.is_square()
            && b_in.rows() == n
            && c_out.cols() == n
            && d.as_ref().is_none_or(|d| d.shape() == (c_out.rows(), b_in.cols()));
        if !shapes_ok {
            return Err(Error::DimensionMismatch(format!(
                "transfer a {:?}, b {:?}, c {:?}, d {:?}",
                a_cl.shape(),
                b_in.shape(),
                c_out.shape(),
                d.as_ref().map(Matrix::shape)
            )));
        }
        Ok(Self { a_cl, b_in, c_out, d })
    }

    /// `[(zI − a)⁻¹ b; I]`: the state response stacked over a feedthrough identity.
    pub fn stacked_with_identity(a: Matrix, b: Matrix) -> Result<Self> {
        let (n, k) = (a.rows(), b.cols());
        let c_out = Matrix::identity(n).vstack(&Matrix::zeros(k, n))?;
        let d = Matrix::zeros(n, k).vstack(&Matrix::identity(k))?;
        Self::with_output(a, b, c_out, Some(d))
    }

    fn require_stable(&self, tol: &SolverTolerances) -> Result<()> {
        let rho = spectral_radius(&self.a_cl, tol)?;
        if rho >= 1.0 {
            return Err(Error::UnstableDynamics { rho });
        }
        Ok(())
    }

    /// Frequency response at `e^{iω}` as `(real, imaginary)` parts.
    fn response(&self, omega: f64) -> Result<(Matrix, Matrix)> {
        let n = self.a_cl.rows();
        let k = self.b_in.cols();
        let (cos, sin) = (omega.cos(), omega.sin());
        // (R + iS) X = b with R = cos·I − a, S = sin·I, as a real 2n system.
        let embedded = Matrix::from_fn(2 * n, 2 * n, |i, j| {
            let (bi, bj) = (i / n, j / n);
            let (ii, jj) = (i % n, j % n);
            let r = if ii == jj { cos } else { 0.0 } - self.a_cl[(ii, jj)];
            let s = if ii == jj { sin } else { 0.0 };
            match (bi, bj) {
                (0, 0) | (1, 1) => r,
                (0, 1) => -s,
                _ => s,
            }
        });
        let rhs = self.b_in.vstack(&Matrix::zeros(n, k))?;
        let sol = Lu::factor(&embedded)?.solve(&rhs)?;
        let xr = Matrix::from_fn(n, k, |i, j| sol[(i, j)]);
        let xi = Matrix::from_fn(n, k, |i, j| sol[(n + i, j)]);
        let mut yr = &self.c_out * &xr;
        if let Some(d) = &self.d {
            yr = &yr + d;
        }
        Ok((yr, &self.c_out * &xi))
    }

    /// Largest singular value of the complex response at `e^{iω}`.
    fn gain_at(&self, omega: f64, tol: &SolverTolerances) -> Result<f64> {
        let (yr, yi) = self.response(omega)?;
        let (p, k) = yr.shape();
        let embedded = Matrix::from_fn(2 * p, 2 * k, |i, j| {
            let (bi, bj) = (i / p, j / k);
            let (ii, jj) = (i % p, j % k);
            match (bi, bj) {
                (0, 0) | (1, 1) => yr[(ii, jj)],
                (0, 1) => -yi[(ii, jj)],
                _ => yi[(ii, jj)],
            }
        });
        spectral_norm(&embedded, tol)
    }
}

/// `√(trace(c P cᵀ) + ‖d‖²_F)` with `P = a P aᵀ + b bᵀ`.
pub fn h2_norm(t: &TransferSpec, tol: &SolverTolerances) -> Result<f64> {
    let q = &t.b_in * &t.b_in.transpose();
    let p = solve_discrete_lyapunov(&t.a_cl, &q, tol)?;
    let direct = t.d.as_ref().map_or(0.0, |d| d.frobenius_norm().powi(2));
    Ok(((&(&t.c_out * &p) * &t.c_out.transpose()).trace().max(0.0) + direct).sqrt())
}

/// Peak gain over the unit circle: uniform grid on `[0, π]`, then
/// golden-section refinement around the largest grid peaks.
pub fn hinf_norm(t: &TransferSpec, tol: &SolverTolerances) -> Result<f64> {
    hinf_norm_with_grid(t, HINF_GRID, tol)
}

pub fn hinf_norm_with_grid(t: &TransferSpec, grid: usize, tol: &SolverTolerances) -> Result<f64> {
    t.require_stable(tol)?;
    let grid = grid.max(8);
    let step = std::f64::consts::PI / (grid - 1) as f64;
    let values = (0..grid).map(|i| t.gain_at(i as f64 * step, tol)).collect::<Result<Vec<_>>>()?;
    let mut best = values.iter().copied().fold(0.0, f64::max);

    let mut peaks: Vec<usize> = (0..grid)
        .filter(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { values[i - 1] };
            let right = if i + 1 == grid { f64::NEG_INFINITY } else { values[i + 1] };
            values[i] >= left && values[i] >= right
        })
        .collect();
    peaks.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    for &i in peaks.iter().take(4) {
        let lo = if i == 0 { 0.0 } else { (i - 1) as f64 * step };
        let hi = ((i + 1).min(grid - 1)) as f64 * step;
        best = best.max(golden_section_max(|w| t.gain_at(w, tol), lo, hi)?);
    }
    Ok(best)
}

fn golden_section_max(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64) -> Result<f64> {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    let mut best = f1.max(f2);
    for _ in 0..200 {
        if hi - lo <= 1e-10 * (1.0 + lo.abs()) {
            break;
        }
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?;
        }
        best = best.max(f1).max(f2);
    }
    Ok(best)
}

/// The three terms of the observation-cost upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JBoundTerms {
    /// `‖Φ̃_w (K − L)‖_H2 σ_v`; needs only the model loop to be stable.
    pub noise_term: f64,
    /// `√2 ε₁ ‖Φ̃_w‖_H2 ‖[Φ_A B; I]‖_H∞ σ_u`, when `A` is stable.
    pub input_term: Option<f64>,
    /// `√2 ε₂ ‖Φ̃_w‖_H2 ‖[Φ_A K; I]‖_H∞ σ_v`, when `A` is stable.
    pub gain_term: Option<f64>,
    pub eps1: f64,
    pub eps2: f64,
    pub eps_l: f64,
}

impl JBoundTerms {
    pub fn total(&self) -> Option<f64> {
        Some(self.noise_term + self.input_term? + self.gain_term?)
    }
}

/// Norms that depend only on the true system and the optimal gain. They are
/// shared by every observer evaluated against the same truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthNorms {
    /// `‖[Φ_A B; I]‖_H∞`.
    pub input_peak: f64,
    /// `‖[Φ_A K; I]‖_H∞`.
    pub gain_peak: f64,
    /// `‖(zI − A + KC)⁻¹‖_H∞`.
    pub kalman_peak: f64,
    /// `‖(zI − A + KC)⁻¹‖_H2`.
    pub kalman_h2: f64,
    /// `2 (1 + ‖K‖) ‖(zI − A + KC)⁻¹‖_H2`.
    pub regulation_const: f64,
}

impl TruthNorms {
    /// `None` when the true `A` is not strictly stable.
    pub fn compute(sys: &SystemMatrices, k_opt: &Matrix, tol: &SolverTolerances) -> Result<Option<Self>> {
        sys.validate()?;
        if k_opt.shape() != (sys.n(), sys.p()) {
            return Err(Error::DimensionMismatch(format!(
                "optimal gain is {:?}, expected ({}, {})",
                k_opt.shape(),
                sys.n(),
                sys.p()
            )));
        }
        if spectral_radius(&sys.a, tol)? >= 1.0 {
            return Ok(None);
        }
        let n = sys.n();
        let kalman_loop = TransferSpec::new(&sys.a - &(k_opt * &sys.c), Matrix::identity(n))?;
        let kalman_h2 = h2_norm(&kalman_loop, tol)?;
        Ok(Some(Self {
            input_peak: hinf_norm(&TransferSpec::stacked_with_identity(sys.a.clone(), sys.b.clone())?, tol)?,
            gain_peak: hinf_norm(&TransferSpec::stacked_with_identity(sys.a.clone(), k_opt.clone())?, tol)?,
            kalman_peak: hinf_norm(&kalman_loop, tol)?,
            kalman_h2,
            regulation_const: 2.0 * (1.0 + spectral_norm(k_opt, tol)?) * kalman_h2,
        }))
    }
}

/// Evaluates every well-defined term of the cost bound.
pub fn j_upper_bound_terms(
    lp: &ObserverLoop,
    k_opt: &Matrix,
    eps_a: f64,
    eps_b: f64,
    tol: &SolverTolerances,
) -> Result<JBoundTerms> {
    let norms = TruthNorms::compute(&lp.truth, k_opt, tol)?;
    j_upper_bound_terms_with(lp, k_opt, eps_a, eps_b, norms.as_ref(), tol)
}

/// As `j_upper_bound_terms` with precomputed truth norms (`None` for an
/// unstable truth).
pub fn j_upper_bound_terms_with(
    lp: &ObserverLoop,
    k_opt: &Matrix,
    eps_a: f64,
    eps_b: f64,
    norms: Option<&TruthNorms>,
    tol: &SolverTolerances,
) -> Result<JBoundTerms> {
    lp.validate()?;
    if k_opt.shape() != lp.gain.shape() {
        return Err(Error::DimensionMismatch("optimal gain shape differs from the observer gain".into()));
    }
    if !(eps_a >= 0.0 && eps_b >= 0.0) {
        return Err(Error::InvalidParameter(format!("norm bounds must be >= 0, got {eps_a}, {eps_b}")));
    }
    let n = lp.truth.n();
    let (sigma_u, sigma_v) = (lp.noise.sigma_u, lp.noise.sigma_v);
    let model_loop = lp.model_error_dynamics();
    let gain_gap = k_opt - &lp.gain;
    let eps_l = spectral_norm(&gain_gap, tol)?;
    let eps1 = eps_a.max(eps_b);
    let eps2 = eps_a.max(eps_l);

    let noise_term = if sigma_v == 0.0 {
        0.0
    } else {
        h2_norm(&TransferSpec::new(model_loop.clone(), gain_gap)?, tol)? * sigma_v
    };
    let mut terms = JBoundTerms { noise_term, input_term: None, gain_term: None, eps1, eps2, eps_l };
    let Some(norms) = norms else {
        return Ok(terms);
    };
    let phi_w = h2_norm(&TransferSpec::new(model_loop, Matrix::identity(n))?, tol)?;
    terms.input_term = Some(2f64.sqrt() * eps1 * phi_w * norms.input_peak * sigma_u);
    terms.gain_term = Some(2f64.sqrt() * eps2 * phi_w * norms.gain_peak * sigma_v);
    Ok(terms)
}

/// Upper bound on the mean-square observation error; `UnstableDynamics` when
/// the true `A` is not strictly stable.
pub fn j_upper_bound(lp: &ObserverLoop, k_opt: &Matrix, eps_a: f64, eps_b: f64, tol: &SolverTolerances) -> Result<f64> {
    let terms = j_upper_bound_terms(lp, k_opt, eps_a, eps_b, tol)?;
    match terms.total() {
        Some(total) => Ok(total),
        None => Err(Error::UnstableDynamics { rho: spectral_radius(&lp.truth.a, tol)? }),
    }
}

/// `2 (1 + ‖K‖) ‖(zI − A + KC)⁻¹‖_H2`.
pub fn default_regulation_const(sys: &SystemMatrices, k_opt: &Matrix, tol: &SolverTolerances) -> Result<f64> {
    let kalman_loop = &sys.a - &(k_opt * &sys.c);
    let h2 = h2_norm(&TransferSpec::new(kalman_loop, Matrix::identity(sys.n()))?, tol)?;
    Ok(2.0 * (1.0 + spectral_norm(k_opt, tol)?) * h2)
}

/// Bound on the cost gap of the best achievable observer built from the
/// identified model. Requires `ε_A ‖(zI − A + KC)⁻¹‖_H∞ ≤ 1/2`.
pub fn j_opt_bound(
    sys: &SystemMatrices,
    k_opt: &Matrix,
    eps1: f64,
    eps_a: f64,
    noise: &NoiseSpec,
    regulation_const: Option<f64>,
    tol: &SolverTolerances,
) -> Result<f64> {
    let mut norms = TruthNorms::compute(sys, k_opt, tol)?
        .ok_or(Error::UnstableDynamics { rho: spectral_radius(&sys.a, tol)? })?;
    if let Some(c) = regulation_const {
        norms.regulation_const = c;
    }
    j_opt_bound_with(&norms, eps1, eps_a, noise)
}

/// As `j_opt_bound` with precomputed truth norms.
pub fn j_opt_bound_with(norms: &TruthNorms, eps1: f64, eps_a: f64, noise: &NoiseSpec) -> Result<f64> {
    if eps_a * norms.kalman_peak > 0.5 {
        return Err(Error::PremiseViolated(format!(
            "eps_a * ||(zI - A + KC)^-1||_Hinf = {} exceeds 1/2",
            eps_a * norms.kalman_peak
        )));
    }
    Ok(eps1
        * (2f64.sqrt() * norms.regulation_const * (norms.input_peak * noise.sigma_u + norms.gain_peak * noise.sigma_v)
            + 2.0 * norms.kalman_h2 * noise.sigma_v))
}

/// Everything measured and bounded for one observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub gain: Matrix,
    pub k_opt: Matrix,
    pub j_mc: f64,
    pub j_mc_stderr: f64,
    /// `None` when the bound is not defined (unstable true `A`).
    pub j_bound: Option<f64>,
    pub j_bound_noise_term: f64,
    /// `None` when not defined or its premise fails.
    pub j_opt_bound: Option<f64>,
    pub j_opt_note: Option<String>,
    pub eps_a: f64,
    pub eps_b: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps_l: f64,
    pub regulation_const: Option<f64>,
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub tolerances: SolverTolerances,
}

/// Simulates the loop and evaluates both bounds.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_performance(
    lp: &ObserverLoop,
    k_opt: &Matrix,
    eps_a: f64,
    eps_b: f64,
    horizon: usize,
    burn_in: usize,
    stream: &RngStream,
    tol: &SolverTolerances,
) -> Result<PerformanceReport> {
    let sim = simulate_observer(lp, horizon, burn_in, stream, tol)?;
    let norms = TruthNorms::compute(&lp.truth, k_opt, tol)?;
    let terms = j_upper_bound_terms_with(lp, k_opt, eps_a, eps_b, norms.as_ref(), tol)?;
    let (j_opt_bound, j_opt_note, regulation_const) = match &norms {
        None => (None, Some("true A is not strictly stable".to_string()), None),
        Some(nm) => match j_opt_bound_with(nm, terms.eps1, eps_a, &lp.noise) {
            Ok(v) => (Some(v), None, Some(nm.regulation_const)),
            Err(Error::PremiseViolated(msg)) => (None, Some(msg), Some(nm.regulation_const)),
            Err(e) => return Err(e),
        },
    };
    Ok(PerformanceReport {
        gain: lp.gain.clone(),
        k_opt: k_opt.clone(),
        j_mc: sim.j_hat,
        j_mc_stderr: sim.stderr,
        j_bound: terms.total(),
        j_bound_noise_term: terms.noise_term,
        j_opt_bound,
        j_opt_note,
        eps_a,
        eps_b,
        eps1: terms.eps1,
        eps2: terms.eps2,
        eps_l: terms.eps_l,
        regulation_const,
        horizon,
        burn_in,
        seed: stream.master_seed,
        stream_id: stream.stream_id,
        tolerances: *tol,
    })
}
