//! Discrete Lyapunov and algebraic Riccati equations.

use super::{linalg, spectral_radius, Matrix, SolverTolerances};
use crate::error::{Error, Result};

/// Solves `P = a P aᵀ + q` by doubling: `P ← P + aₖ P aₖᵀ`, `aₖ₊₁ = aₖ²`.
pub fn solve_discrete_lyapunov(a: &Matrix, q: &Matrix, tol: &SolverTolerances) -> Result<Matrix> {
    if !a.is_square() || q.shape() != a.shape() {
        return Err(Error::DimensionMismatch(format!(
            "Lyapunov needs square a and matching q, got {:?} and {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let rho = spectral_radius(a, tol)?;
    if rho >= 1.0 {
        return Err(Error::UnstableDynamics { rho });
    }
    let mut p = q.symmetrize();
    let mut ak = a.clone();
    for _ in 0..tol.max_iters {
        let step = &(&ak * &p) * &ak.transpose();
        p = (&p + &step).symmetrize();
        if step.frobenius_norm() < tol.riccati_tol {
            return Ok(p);
        }
        ak = &ak * &ak;
    }
    Err(Error::NonConvergence { what: "Lyapunov doubling", iters: tol.max_iters })
}

/// Steady-state filter Riccati solution and predictor gain.
#[derive(Debug, Clone)]
pub struct DareSolution {
    pub p: Matrix,
    pub k: Matrix,
    pub iterations: usize,
}

/// Iterates `P ← a P aᵀ − a P cᵀ (c P cᵀ + r)⁻¹ c P aᵀ + q` from `P₀ = q`
/// until the step is below `riccati_tol`, or below the rounding floor
/// `64 ε ‖P‖_F` when that is larger.
///
/// Returns `P` and the gain `K = a P cᵀ (c P cᵀ + r)⁻¹`, for which
/// `ρ(a − K c) < 1` when `(a, c)` is detectable.
pub fn solve_dare(a: &Matrix, c: &Matrix, q: &Matrix, r: &Matrix, tol: &SolverTolerances) -> Result<DareSolution> {
    let n = a.rows();
    let p_out = c.rows();
    if !a.is_square() || c.cols() != n || q.shape() != (n, n) || r.shape() != (p_out, p_out) {
        return Err(Error::DimensionMismatch(format!(
            "DARE shapes a {:?}, c {:?}, q {:?}, r {:?}",
            a.shape(),
            c.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let at = a.transpose();
    let ct = c.transpose();
    let mut p = q.symmetrize();
    for it in 1..=tol.max_iters {
        let (next, _) = riccati_map(&p, a, &at, c, &ct, q, r)?;
        let step = (&next - &p).frobenius_norm();
        p = next;
        if !p.is_finite() {
            return Err(Error::NonConvergence { what: "DARE iteration (diverged)", iters: it });
        }
        if step < tol.riccati_tol.max(64.0 * f64::EPSILON * p.frobenius_norm()) {
            let (_, k) = riccati_map(&p, a, &at, c, &ct, q, r)?;
            return Ok(DareSolution { p, k, iterations: it });
        }
    }
    Err(Error::NonConvergence { what: "DARE iteration", iters: tol.max_iters })
}

/// One Riccati step; also returns the gain evaluated at the input `p`.
fn riccati_map(
    p: &Matrix,
    a: &Matrix,
    at: &Matrix,
    c: &Matrix,
    ct: &Matrix,
    q: &Matrix,
    r: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let apct = &(a * p) * ct;
    let innovation = &(&(c * p) * ct) + r;
    let innovation_inv = linalg::inverse(&innovation).map_err(|_| Error::SingularInnovation)?;
    let k = &apct * &innovation_inv;
    let next = &(&(&(a * p) * at) - &(&k * &apct.transpose())) + q;
    Ok((next.symmetrize(), k))
}

/// `‖P − a P aᵀ − q‖_F`.
pub fn lyapunov_residual(a: &Matrix, q: &Matrix, p: &Matrix) -> f64 {
    (&(p - &(&(a * p) * &a.transpose())) - q).frobenius_norm()
}

/// Frobenius norm of the DARE residual at `p`.
pub fn dare_residual(a: &Matrix, c: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> f64 {
    match riccati_map(p, a, &a.transpose(), c, &c.transpose(), q, r) {
        Ok((next, _)) => (&next - p).frobenius_norm(),
        Err(_) => f64::INFINITY,
    }
}
