//! Finite-sample error bounds for the SVR estimate: the variance proxies
//! `θ_A`, `θ_B`, the concentration radii `H_A`, `H_B`, elementwise error
//! intervals, the interval for the true `A` and the norm bounds `ε_A`, `ε_B`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Estimate;
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    pub n: usize,
    pub m: usize,
    pub big_m: f64,
    pub delta: f64,
    pub gamma: f64,
    pub n_rollouts: usize,
    pub t0: usize,
    pub sigma_u: f64,
    pub sigma_w: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let ok = self.n >= 1
            && self.m >= 1
            && positive(self.big_m)
            && self.delta > 0.0
            && self.delta < 1.0
            && self.gamma.is_finite()
            && self.gamma >= 0.0
            && self.n_rollouts >= 1
            && self.t0 >= 2
            && positive(self.sigma_u)
            && self.sigma_w.is_finite()
            && self.sigma_w >= 0.0;
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid bound parameters {self:?}")));
        }
        Ok(())
    }

    /// `N₀ = (T0 − 1) N`.
    pub fn n0(&self) -> usize {
        (self.t0 - 1) * self.n_rollouts
    }

    /// `M^k` evaluated as `exp(k ln M)`.
    fn m_pow(&self, k: usize) -> f64 {
        (k as f64 * self.big_m.ln()).exp()
    }
}

pub fn theta_a(p: &BoundParams) -> Result<f64> {
    p.validate()?;
    let (n, m, t0) = (p.n as f64, p.m as f64, p.t0);
    let su2 = p.sigma_u * p.sigma_u;
    let sw2 = p.sigma_w * p.sigma_w;
    let num = 4.0 * n * (m * p.big_m * su2 + sw2);
    let den = p.n_rollouts as f64 * (n * p.m_pow(2 * t0 - 1) * su2 + p.m_pow(2 * t0 - 2) * sw2);
    Ok(num / den)
}

pub fn theta_b(p: &BoundParams) -> Result<f64> {
    p.validate()?;
    let (n, m, t0) = (p.n as f64, p.m as f64, p.t0);
    let su2 = p.sigma_u * p.sigma_u;
    let sw2 = p.sigma_w * p.sigma_w;
    let num = 4.0 * m * (n * p.m_pow(2 * t0 - 1) * su2 + (p.m_pow(2 * t0 - 2) + 1.0) * sw2);
    Ok(num / (p.n_rollouts as f64 * su2))
}

/// `H = √(s/((1+γ)N₀)) + √(2 s log(1/δ)/((1+γ)N₀))` with `s = θ + dim·γ·M²`.
pub fn h_bound(theta: f64, dim: usize, p: &BoundParams) -> Result<f64> {
    p.validate()?;
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::InvalidParameter(format!("theta must be finite and >= 0, got {theta}")));
    }
    let s = theta + dim as f64 * p.gamma * p.big_m * p.big_m;
    let scale = (1.0 + p.gamma) * p.n0() as f64;
    Ok((s / scale).sqrt() + (2.0 * s * (1.0 / p.delta).ln() / scale).sqrt())
}

/// The closed ball `[center − radius, center + radius]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub center: f64,
    pub radius: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        (x - self.center).abs() <= self.radius
    }

    pub fn lower(&self) -> f64 {
        self.center - self.radius
    }

    pub fn upper(&self) -> f64 {
        self.center + self.radius
    }
}

pub type IntervalGrid = Vec<Vec<Interval>>;

/// Whether every entry of `x` lies in the matching interval.
pub fn grid_contains(grid: &IntervalGrid, x: &Matrix) -> bool {
    grid.iter().enumerate().all(|(i, row)| row.iter().enumerate().all(|(j, iv)| iv.contains(x[(i, j)])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundResult {
    pub theta_a: f64,
    pub theta_b: f64,
    pub h_a: f64,
    pub h_b: f64,
    pub eps_a: f64,
    pub eps_b: f64,
    pub delta_a_intervals: IntervalGrid,
    pub delta_b_intervals: IntervalGrid,
    pub a_intervals: IntervalGrid,
}

impl BoundResult {
    /// Shared radius `√((1+γ) H_A)` of the `A` intervals.
    pub fn radius_a(&self) -> f64 {
        self.a_intervals[0][0].radius
    }
}

fn check_dims(est: &Estimate, p: &BoundParams) -> Result<()> {
    if est.n() != p.n || est.m() != p.m || !est.a_hat.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {}x{} / {}x{}, bound parameters say n = {}, m = {}",
            est.a_hat.rows(),
            est.a_hat.cols(),
            est.b_hat.rows(),
            est.b_hat.cols(),
            p.n,
            p.m
        )));
    }
    Ok(())
}

fn radii(p: &BoundParams) -> Result<(f64, f64, f64, f64)> {
    let (ta, tb) = (theta_a(p)?, theta_b(p)?);
    let (ha, hb) = (h_bound(ta, p.n, p)?, h_bound(tb, p.m, p)?);
    Ok((ha, hb, ((1.0 + p.gamma) * ha).sqrt(), ((1.0 + p.gamma) * hb).sqrt()))
}

fn grid(hat: &Matrix, center_scale: f64, radius: f64) -> IntervalGrid {
    (0..hat.rows())
        .map(|i| (0..hat.cols()).map(|j| Interval { center: center_scale * hat[(i, j)], radius }).collect())
        .collect()
}

/// `ΔA_ij ∈ B(γÃ_ij, √((1+γ)H_A))`, `ΔB_ij ∈ B(γB̃_ij, √((1+γ)H_B))`.
pub fn error_intervals(est: &Estimate, p: &BoundParams) -> Result<(IntervalGrid, IntervalGrid)> {
    check_dims(est, p)?;
    let (_, _, ra, rb) = radii(p)?;
    Ok((grid(&est.a_hat, p.gamma, ra), grid(&est.b_hat, p.gamma, rb)))
}

/// `A_ij ∈ B((1+γ)Ã_ij, √((1+γ)H_A))`.
pub fn parameter_interval_a(est: &Estimate, p: &BoundParams) -> Result<IntervalGrid> {
    check_dims(est, p)?;
    let (_, _, ra, _) = radii(p)?;
    Ok(grid(&est.a_hat, 1.0 + p.gamma, ra))
}

/// `ε = √(Σ_ij (|γ X̃_ij| + r)²)` over the entries of `Ã` and of `B̃`.
pub fn epsilon_norm_bounds(est: &Estimate, p: &BoundParams) -> Result<(f64, f64)> {
    check_dims(est, p)?;
    let (_, _, ra, rb) = radii(p)?;
    Ok((frobenius_envelope(&est.a_hat, p.gamma, ra), frobenius_envelope(&est.b_hat, p.gamma, rb)))
}

fn frobenius_envelope(hat: &Matrix, gamma: f64, radius: f64) -> f64 {
    hat.as_slice().iter().map(|v| ((gamma * v).abs() + radius).powi(2)).sum::<f64>().sqrt()
}

/// Everything above in one record.
pub fn compute_bounds(est: &Estimate, p: &BoundParams) -> Result<BoundResult> {
    check_dims(est, p)?;
    let (theta_a, theta_b) = (theta_a(p)?, theta_b(p)?);
    let (h_a, h_b, ra, rb) = radii(p)?;
    Ok(BoundResult {
        theta_a,
        theta_b,
        h_a,
        h_b,
        eps_a: frobenius_envelope(&est.a_hat, p.gamma, ra),
        eps_b: frobenius_envelope(&est.b_hat, p.gamma, rb),
        delta_a_intervals: grid(&est.a_hat, p.gamma, ra),
        delta_b_intervals: grid(&est.b_hat, p.gamma, rb),
        a_intervals: grid(&est.a_hat, 1.0 + p.gamma, ra),
    })
}
