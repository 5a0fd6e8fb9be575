use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Scaling;
use crate::lti_sim::{NoiseSpec, SystemMatrices};
use crate::numerics::SolverTolerances;
use crate::observer_design::default_targets;

/// Which ground-truth system an experiment runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SystemChoice {
    Stable,
    Unstable,
    Custom(SystemMatrices),
}

impl SystemChoice {
    pub fn label(&self) -> &'static str {
        match self {
            SystemChoice::Stable => "stable",
            SystemChoice::Unstable => "unstable",
            SystemChoice::Custom(_) => "custom",
        }
    }

    pub fn matrices(&self) -> SystemMatrices {
        match self {
            SystemChoice::Stable => SystemMatrices::stable_benchmark(),
            SystemChoice::Unstable => SystemMatrices::unstable_benchmark(),
            SystemChoice::Custom(sys) => sys.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub system: SystemChoice,
    pub noise: NoiseSpec,
    pub t0: usize,
    pub rollout_counts: Vec<usize>,
    pub gammas: Vec<f64>,
    pub big_m: f64,
    pub delta: f64,
    /// Identifications per cell in the RMSE and bound experiments.
    pub repeats: usize,
    /// Identifications plus observer simulations per cell in the cost experiment.
    pub cost_repeats: usize,
    pub seed: u64,
    pub estimator_scaling: Scaling,
    pub table2_gamma: f64,
    pub table2_sigma_ws: Vec<f64>,
    /// Simulation length for strictly stable true systems.
    pub horizon: usize,
    /// Steps discarded before averaging; `None` means 10% of the horizon.
    pub burn_in: Option<usize>,
    /// Simulation length when the true `A` is not strictly stable.
    pub unstable_horizon: usize,
    pub design_targets: Vec<f64>,
    pub tolerances: SolverTolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemChoice::Stable,
            noise: NoiseSpec::default(),
            t0: 11,
            rollout_counts: (1..=45).map(|k| 10 * k).collect(),
            gammas: vec![0.005, 0.01, 0.05, 0.1],
            big_m: 1.1,
            delta: 0.01,
            repeats: 45,
            cost_repeats: 1000,
            seed: 0,
            estimator_scaling: Scaling::Raw,
            table2_gamma: 0.05,
            table2_sigma_ws: vec![0.1, 1.0, 10.0],
            horizon: 20_000,
            burn_in: None,
            unstable_horizon: 200,
            design_targets: default_targets(),
            tolerances: SolverTolerances::default(),
        }
    }
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("config field `{field}`: {msg}"))
}

impl ExperimentConfig {
    /// Parses a JSON config; `"default"` (bare word or JSON string) selects
    /// the built-in defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        if trimmed == "default" || trimmed == "\"default\"" {
            return Ok(Self::default());
        }
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            Error::InvalidParameter(format!("config parse error at line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn burn_in_for(&self, horizon: usize) -> usize {
        self.burn_in.unwrap_or(horizon / 10)
    }

    pub fn validate(&self) -> Result<()> {
        if let SystemChoice::Custom(sys) = &self.system {
            sys.validate().map_err(|e| field_error("system", e))?;
        }
        self.noise.validate().map_err(|e| field_error("noise", e))?;
        self.tolerances.validate().map_err(|e| field_error("tolerances", e))?;
        if self.t0 < 2 {
            return Err(field_error("t0", format!("must be at least 2, got {}", self.t0)));
        }
        if self.rollout_counts.is_empty() || self.rollout_counts.contains(&0) {
            return Err(field_error("rollout_counts", "must be a non-empty list of positive integers"));
        }
        let nonneg = |v: &f64| v.is_finite() && *v >= 0.0;
        if self.gammas.is_empty() || !self.gammas.iter().all(nonneg) {
            return Err(field_error("gammas", "must be a non-empty list of finite values >= 0"));
        }
        if !(self.big_m.is_finite() && self.big_m > 0.0) {
            return Err(field_error("big_m", format!("must be positive, got {}", self.big_m)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(field_error("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if self.repeats == 0 {
            return Err(field_error("repeats", "must be at least 1"));
        }
        if self.cost_repeats == 0 {
            return Err(field_error("cost_repeats", "must be at least 1"));
        }
        if !nonneg(&self.table2_gamma) {
            return Err(field_error("table2_gamma", "must be finite and >= 0"));
        }
        if self.table2_sigma_ws.is_empty() || !self.table2_sigma_ws.iter().all(nonneg) {
            return Err(field_error("table2_sigma_ws", "must be a non-empty list of finite values >= 0"));
        }
        for (name, horizon) in [("horizon", self.horizon), ("unstable_horizon", self.unstable_horizon)] {
            let burn = self.burn_in_for(horizon);
            if horizon < 10 * burn || horizon <= burn + crate::performance::BATCHES {
                return Err(field_error(
                    name,
                    format!("{horizon} must be at least 10 x burn-in ({burn}) and longer than burn-in plus 20"),
                ));
            }
        }
        if self.design_targets.is_empty() || !self.design_targets.iter().all(|t| t.is_finite() && t.abs() < 1.0) {
            return Err(field_error("design_targets", "must be a non-empty list of values in (-1, 1)"));
        }
        Ok(())
    }
}
