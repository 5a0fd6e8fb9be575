use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} did not converge within {iters} iterations")]
    NonConvergence { what: &'static str, iters: usize },

    #[error("unstable dynamics: spectral radius {rho} >= 1")]
    UnstableDynamics { rho: f64 },

    #[error("closed loop A - LC is unstable: spectral radius {rho} >= 1")]
    UnstableLoop { rho: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("innovation covariance C P C^T + R is singular")]
    SingularInnovation,

    #[error("Gram matrix is numerically singular (reciprocal condition {rcond:e})")]
    SingularGram { rcond: f64 },

    #[error("regression data is empty")]
    EmptyData,

    #[error("output matrix C is rank deficient")]
    RankDeficientC,

    #[error("no candidate gain satisfies the stability certificate")]
    Infeasible,

    #[error("premise violated: {0}")]
    PremiseViolated(String),
}

pub type Result<T> = std::result::Result<T, Error>;
