//! Observer gain design certified against an interval model of `A` by a
//! Gershgorin disc argument, and the Kalman gain used as a benchmark.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::IntervalGrid;
use crate::error::{Error, Result};
use crate::lti_sim::{NoiseSpec, RngStream, SystemMatrices};
use crate::numerics::linalg::right_pseudo_inverse;
use crate::numerics::{solve_dare, spectral_radius, Matrix, SolverTolerances};

/// Entrywise box `|X_ij − centers_ij| ≤ radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalMatrix {
    pub centers: Matrix,
    pub radius: f64,
    /// Probability with which the box is claimed to hold the true matrix.
    pub confidence: f64,
}

impl IntervalMatrix {
    pub fn new(centers: Matrix, radius: f64, confidence: f64) -> Result<Self> {
        if !centers.is_square() {
            return Err(Error::DimensionMismatch(format!("interval centers must be square, got {:?}", centers.shape())));
        }
        if !(radius.is_finite() && radius >= 0.0) || !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidParameter(format!(
                "interval radius must be finite and >= 0 and confidence in [0, 1], got {radius}, {confidence}"
            )));
        }
        Ok(Self { centers, radius, confidence })
    }

    /// Builds the box from a grid whose entries share one radius.
    pub fn from_grid(grid: &IntervalGrid, confidence: f64) -> Result<Self> {
        let n = grid.len();
        if n == 0 || grid.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch("interval grid must be square and non-empty".into()));
        }
        let radius = grid[0][0].radius;
        if grid.iter().flatten().any(|iv| iv.radius != radius) {
            return Err(Error::InvalidParameter("interval grid radii differ".into()));
        }
        let centers = Matrix::from_fn(n, n, |i, j| grid[i][j].center);
        Self::new(centers, radius, confidence)
    }

    pub fn n(&self) -> usize {
        self.centers.rows()
    }

    pub fn member(&self, x: &Matrix) -> bool {
        x.shape() == self.centers.shape()
            && x.as_slice().iter().zip(self.centers.as_slice()).all(|(v, c)| (v - c).abs() <= self.radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityCertificate {
    pub gain: Matrix,
    pub feasible: bool,
    /// Slack `1 − |D_ii| − r − Σ_{j≠i}(|D_ij| + r)` per row, `D = centers − LC`.
    pub per_row_margin: Vec<f64>,
    pub confidence: f64,
    pub interval: IntervalMatrix,
    /// Diagonal target of the candidate family, when produced by `design_gain`.
    pub tau: Option<f64>,
}

impl StabilityCertificate {
    pub fn min_margin(&self) -> f64 {
        self.per_row_margin.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Row-wise Gershgorin test of every matrix in `iv` minus `l c`.
///
/// Each row needs `|D_ii| < 1` and a nonnegative margin; the diagonal's own
/// uncertainty radius is charged against the unit-disc slack.
pub fn gershgorin_feasible(l: &Matrix, iv: &IntervalMatrix, c: &Matrix) -> Result<StabilityCertificate> {
    let n = iv.n();
    if c.cols() != n || l.rows() != n || l.cols() != c.rows() {
        return Err(Error::DimensionMismatch(format!(
            "gain {:?} and output matrix {:?} do not match interval dimension {n}",
            l.shape(),
            c.shape()
        )));
    }
    let d = &iv.centers - &(l * c);
    let r = iv.radius;
    let mut feasible = true;
    let per_row_margin: Vec<f64> = (0..n)
        .map(|i| {
            let diag = d[(i, i)].abs();
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| d[(i, j)].abs() + r).sum();
            let margin = 1.0 - diag - r - off;
            feasible &= diag < 1.0 && margin >= 0.0;
            margin
        })
        .collect();
    Ok(StabilityCertificate {
        gain: l.clone(),
        feasible,
        per_row_margin,
        confidence: iv.confidence,
        interval: iv.clone(),
        tau: None,
    })
}

/// `{0, 0.05, −0.05, 0.1, −0.1, …, 0.9, −0.9}`.
pub fn default_targets() -> Vec<f64> {
    let mut t = vec![0.0];
    for k in 1..=18 {
        let v = k as f64 * 0.05;
        t.push(v);
        t.push(-v);
    }
    t
}

/// Searches `L = (centers − τI) C⁺` over `targets`; keeps the feasible
/// candidate with the largest minimum row margin, then the smallest `|τ|`,
/// then the earliest in `targets`.
pub fn design_gain(iv: &IntervalMatrix, c: &Matrix, targets: &[f64]) -> Result<StabilityCertificate> {
    let c_pinv = right_pseudo_inverse(c)?;
    let n = iv.n();
    let candidates = targets
        .par_iter()
        .map(|&tau| {
            let shifted = &iv.centers - &Matrix::identity(n).scale(tau);
            let mut cert = gershgorin_feasible(&(&shifted * &c_pinv), iv, c)?;
            cert.tau = Some(tau);
            Ok(cert)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<StabilityCertificate> = None;
    for cert in candidates.into_iter().filter(|c| c.feasible) {
        let better = match &best {
            None => true,
            Some(b) => {
                let (m, bm) = (cert.min_margin(), b.min_margin());
                m > bm || (m == bm && cert.tau.unwrap_or(0.0).abs() < b.tau.unwrap_or(0.0).abs())
            }
        };
        if better {
            best = Some(cert);
        }
    }
    best.ok_or(Error::Infeasible)
}

/// Largest `ρ(X − LC)` over all corners of the box (for `n ≤ 3`) and
/// `samples` uniform draws from it.
pub fn verify_stability_exhaustive(
    cert: &StabilityCertificate,
    iv: &IntervalMatrix,
    c: &Matrix,
    samples: usize,
    stream: &mut RngStream,
    tol: &SolverTolerances,
) -> Result<f64> {
    let n = iv.n();
    let lc = &cert.gain * c;
    if lc.shape() != (n, n) {
        return Err(Error::DimensionMismatch("gain does not match the interval dimension".into()));
    }
    let rho_at = |x: &Matrix| spectral_radius(&(x - &lc), tol);
    let mut worst = rho_at(&iv.centers)?;
    if iv.radius == 0.0 {
        return Ok(worst);
    }
    if n <= 3 {
        let entries = n * n;
        for mask in 0u32..(1u32 << entries) {
            let corner = Matrix::from_fn(n, n, |i, j| {
                let sign = if mask >> (i * n + j) & 1 == 1 { 1.0 } else { -1.0 };
                iv.centers[(i, j)] + sign * iv.radius
            });
            worst = worst.max(rho_at(&corner)?);
        }
    }
    for _ in 0..samples {
        let sample = Matrix::from_fn(n, n, |i, j| iv.centers[(i, j)] + iv.radius * (2.0 * stream.uniform() - 1.0));
        worst = worst.max(rho_at(&sample)?);
    }
    Ok(worst)
}

/// Steady-state Kalman predictor gain for `q = σ_w² I`, `r = σ_v² I`.
pub fn kalman_gain(sys: &SystemMatrices, noise: &NoiseSpec, tol: &SolverTolerances) -> Result<Matrix> {
    sys.validate()?;
    let (n, p) = (sys.n(), sys.p());
    if noise.sigma_v == 0.0 && sys.c == Matrix::identity(n) {
        // Noise-free full-state measurements: the one-step predictor is exact.
        return Ok(sys.a.clone());
    }
    let q = Matrix::identity(n).scale(noise.sigma_w * noise.sigma_w);
    let r = Matrix::identity(p).scale(noise.sigma_v * noise.sigma_v);
    Ok(solve_dare(&sys.a, &sys.c, &q, &r, tol)?.k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact(a: Matrix) -> IntervalMatrix {
        IntervalMatrix::new(a, 0.0, 1.0).unwrap()
    }

    #[test]
    fn stable_diagonal_needs_no_gain() {
        let iv = exact(Matrix::from_diag(&[0.9; 3]));
        let cert = gershgorin_feasible(&Matrix::zeros(3, 3), &iv, &Matrix::identity(3)).unwrap();
        assert!(cert.feasible);
        for m in &cert.per_row_margin {
            assert!((m - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn wide_interval_fails_without_gain() {
        let iv = IntervalMatrix::new(Matrix::from_diag(&[0.9; 3]), 0.2, 0.99).unwrap();
        let cert = gershgorin_feasible(&Matrix::zeros(3, 3), &iv, &Matrix::identity(3)).unwrap();
        assert!(!cert.feasible);
        // 1 − 0.9 − 0.2 − 2·0.2
        assert!((cert.per_row_margin[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn deadbeat_gain_has_unit_margin() {
        let a = SystemMatrices::stable_benchmark().a;
        let cert = gershgorin_feasible(&a, &exact(a.clone()), &Matrix::identity(3)).unwrap();
        assert!(cert.feasible);
        assert!(cert.per_row_margin.iter().all(|m| *m == 1.0));
    }

    #[test]
    fn design_on_exact_model_hits_target() {
        let a = SystemMatrices::stable_benchmark().a;
        let iv = exact(a.clone());
        let cert = design_gain(&iv, &Matrix::identity(3), &default_targets()).unwrap();
        assert_eq!(cert.tau, Some(0.0));
        let rho = spectral_radius(&(&a - &cert.gain), &SolverTolerances::default()).unwrap();
        assert!(rho < 1e-12);
        let cert = design_gain(&iv, &Matrix::identity(3), &[0.5]).unwrap();
        let rho = spectral_radius(&(&a - &cert.gain), &SolverTolerances::default()).unwrap();
        assert!((rho - 0.5).abs() < 1e-10);
    }

    #[test]
    fn unit_radius_is_infeasible() {
        let iv = IntervalMatrix::new(Matrix::from_diag(&[0.5; 3]), 1.0, 0.99).unwrap();
        assert_eq!(design_gain(&iv, &Matrix::identity(3), &default_targets()).unwrap_err(), Error::Infeasible);
    }

    #[test]
    fn rank_deficient_output_matrix() {
        let iv = exact(Matrix::identity(2));
        let c = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(design_gain(&iv, &c, &default_targets()).unwrap_err(), Error::RankDeficientC);
    }

    #[test]
    fn exhaustive_check_singleton_and_bad_gain() {
        let tol = SolverTolerances::default();
        let a = SystemMatrices::unstable_benchmark().a;
        let iv = exact(a.clone());
        let mut stream = RngStream::new(1, 1);
        let cert = gershgorin_feasible(&Matrix::from_diag(&[0.5; 3]), &iv, &Matrix::identity(3)).unwrap();
        let worst = verify_stability_exhaustive(&cert, &iv, &Matrix::identity(3), 10, &mut stream, &tol).unwrap();
        let direct = spectral_radius(&(&a - &Matrix::from_diag(&[0.5; 3])), &tol).unwrap();
        assert_eq!(worst, direct);

        let boxed = IntervalMatrix::new(a.clone(), 0.01, 0.99).unwrap();
        let bad = gershgorin_feasible(&a.scale(-1.0), &boxed, &Matrix::identity(3)).unwrap();
        assert!(!bad.feasible);
        let worst = verify_stability_exhaustive(&bad, &boxed, &Matrix::identity(3), 10, &mut stream, &tol).unwrap();
        assert!(worst > 2.0);
    }

    #[test]
    fn certified_box_is_stable_at_every_corner() {
        let tol = SolverTolerances::default();
        let a = SystemMatrices::stable_benchmark().a;
        let iv = IntervalMatrix::new(a, 0.1, 0.99).unwrap();
        let cert = design_gain(&iv, &Matrix::identity(3), &default_targets()).unwrap();
        let mut stream = RngStream::new(5, 0);
        let worst = verify_stability_exhaustive(&cert, &iv, &Matrix::identity(3), 200, &mut stream, &tol).unwrap();
        assert!(worst < 1.0);
    }

    #[test]
    fn kalman_gain_cases() {
        let tol = SolverTolerances::default();
        let scalar = |v: f64| Matrix::new(1, 1, vec![v]).unwrap();
        let sys = SystemMatrices::new(scalar(0.9), scalar(1.0), scalar(1.0)).unwrap();
        let k = kalman_gain(&sys, &NoiseSpec { sigma_w: 1.0, sigma_v: 1.0, sigma_u: 1.0 }, &tol).unwrap();
        let p = (0.81 + 4.6561f64.sqrt()) / 2.0;
        assert!((k[(0, 0)] - 0.9 * p / (p + 1.0)).abs() < 1e-10);

        let bench = SystemMatrices::stable_benchmark();
        let k = kalman_gain(&bench, &NoiseSpec { sigma_w: 1.0, sigma_v: 1e-7, sigma_u: 1.0 }, &tol).unwrap();
        assert!((&k - &bench.a).max_abs() < 1e-9);
        let k = kalman_gain(&bench, &NoiseSpec { sigma_w: 1.0, sigma_v: 0.0, sigma_u: 1.0 }, &tol).unwrap();
        assert_eq!(k, bench.a);

        let memoryless = SystemMatrices::new(Matrix::zeros(2, 2), Matrix::column(&[1.0, 0.0]), Matrix::identity(2))
            .unwrap();
        let k = kalman_gain(&memoryless, &NoiseSpec { sigma_w: 1.0, sigma_v: 1.0, sigma_u: 1.0 }, &tol).unwrap();
        assert_eq!(k.max_abs(), 0.0);
    }

    #[test]
    fn certificate_json_carries_gain_and_interval() {
        let iv = exact(Matrix::from_diag(&[0.9; 2]));
        let cert = gershgorin_feasible(&Matrix::zeros(2, 2), &iv, &Matrix::identity(2)).unwrap();
        let v = serde_json::to_value(&cert).unwrap();
        assert_eq!(v["gain"].as_array().unwrap().len(), 2);
        assert_eq!(v["interval"]["radius"], 0.0);
        assert_eq!(v["feasible"], true);
    }
}
