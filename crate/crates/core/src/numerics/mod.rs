//! Dense linear-algebra kernel: matrix type, solves, eigenvalues, norms and
//! the discrete Lyapunov / Riccati solvers.

mod eigen;
pub mod linalg;
mod matrix;
mod riccati;

pub use eigen::{eigenvalues, hessenberg, spectral_norm, spectral_radius};
pub use matrix::Matrix;
pub use riccati::{dare_residual, lyapunov_residual, solve_dare, solve_discrete_lyapunov, DareSolution};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convergence thresholds shared by every iterative solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverTolerances {
    pub eig_tol: f64,
    pub riccati_tol: f64,
    pub max_iters: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self { eig_tol: 1e-10, riccati_tol: 1e-12, max_iters: 100_000 }
    }
}

impl SolverTolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.eig_tol > 0.0 && self.riccati_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidParameter(format!("solver tolerances must be positive: {self:?}")));
        }
        Ok(())
    }
}
