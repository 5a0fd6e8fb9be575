//! Identification of noisy discrete-time LTI systems from multi-rollout data
//! with a quadratic-loss support vector regression estimator, finite-sample
//! error intervals, Gershgorin-certified observer gains and mean-square
//! observation error analysis.

pub mod bounds;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod lti_sim;
pub mod numerics;
pub mod observer_design;
pub mod performance;

pub use error::{Error, Result};
pub use numerics::{Matrix, SolverTolerances};
