use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Scaling;

/// One aggregated experiment cell. The first sixteen columns are the fixed
/// schema shared by every experiment; the rest are diagnostics. Optional
/// values are left empty in CSV and `null` in JSON when an experiment does
/// not measure them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub n_rollouts: usize,
    pub gamma: f64,
    pub sigma_w: f64,
    pub rmse_a_ols: f64,
    pub rmse_a_svr: f64,
    pub rmse_b_ols: f64,
    pub rmse_b_svr: f64,
    pub h_a: f64,
    pub h_b: f64,
    pub eps_a: f64,
    pub eps_b: f64,
    /// Fraction of repeats with every `ΔA_ij` inside its interval.
    pub coverage_a: f64,
    /// Fraction of repeats for which a certified gain exists.
    pub gain_feasible: f64,
    pub j_mc: Option<f64>,
    pub j_bound: Option<f64>,
    pub seed: u64,

    pub experiment: String,
    pub system: String,
    pub n0: usize,
    pub estimator_scaling: Scaling,
    pub repeats: usize,
    /// Fraction of repeats with every true `A_ij` inside its interval.
    pub coverage_a_param: f64,
    /// Fraction of repeats with `‖ΔA‖ ≤ ε_A`.
    pub coverage_eps_a: f64,
    /// Fraction of repeats whose `A` interval proves `‖A‖_∞ < 1`.
    pub a_certified_stable: f64,
    pub radius_a: f64,
    /// Mean over repeats of `max_ij |γ Ã_ij|`.
    pub center_offset_a: f64,
    /// Mean over repeats of `max_ij |ΔA_ij|`.
    pub max_abs_delta_a: f64,
    pub j_mc_stderr: Option<f64>,
    pub j_var: Option<f64>,
    pub delta_j: Option<f64>,
    pub delta_j_stderr: Option<f64>,
    pub cost_ratio: Option<f64>,
    pub j_opt_bound: Option<f64>,
}

/// Column order of the CSV header; equal to the serialized field order.
pub const SWEEP_FIELDS: [&str; 32] = [
    "n_rollouts",
    "gamma",
    "sigma_w",
    "rmse_a_ols",
    "rmse_a_svr",
    "rmse_b_ols",
    "rmse_b_svr",
    "h_a",
    "h_b",
    "eps_a",
    "eps_b",
    "coverage_a",
    "gain_feasible",
    "j_mc",
    "j_bound",
    "seed",
    "experiment",
    "system",
    "n0",
    "estimator_scaling",
    "repeats",
    "coverage_a_param",
    "coverage_eps_a",
    "a_certified_stable",
    "radius_a",
    "center_offset_a",
    "max_abs_delta_a",
    "j_mc_stderr",
    "j_var",
    "delta_j",
    "delta_j_stderr",
    "cost_ratio",
];

/// 17 significant digits, which round-trips every `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn scaling_name(s: Scaling) -> &'static str {
    match s {
        Scaling::Raw => "RAW",
        Scaling::GramScaled => "GRAM_SCALED",
    }
}

impl SweepRow {
    pub fn csv_record(&self) -> Vec<String> {
        let f = format_float;
        vec![
            self.n_rollouts.to_string(),
            f(self.gamma),
            f(self.sigma_w),
            f(self.rmse_a_ols),
            f(self.rmse_a_svr),
            f(self.rmse_b_ols),
            f(self.rmse_b_svr),
            f(self.h_a),
            f(self.h_b),
            f(self.eps_a),
            f(self.eps_b),
            f(self.coverage_a),
            f(self.gain_feasible),
            opt(self.j_mc),
            opt(self.j_bound),
            self.seed.to_string(),
            self.experiment.clone(),
            self.system.clone(),
            self.n0.to_string(),
            scaling_name(self.estimator_scaling).to_string(),
            self.repeats.to_string(),
            f(self.coverage_a_param),
            f(self.coverage_eps_a),
            f(self.a_certified_stable),
            f(self.radius_a),
            f(self.center_offset_a),
            f(self.max_abs_delta_a),
            opt(self.j_mc_stderr),
            opt(self.j_var),
            opt(self.delta_j),
            opt(self.delta_j_stderr),
            opt(self.cost_ratio),
        ]
    }
}

// `j_opt_bound` is JSON-only: it is often undefined and the CSV keeps the
// cost columns it can always fill. See `SWEEP_FIELDS`.

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("CSV output failed: {e}"))
}

/// Writes a header plus one line per row.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_FIELDS).map_err(csv_error)?;
    for row in rows {
        w.write_record(row.csv_record()).map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

/// Newline-delimited JSON, one document per row.
pub fn write_json_lines<W: Write, T: Serialize>(rows: &[T], mut out: W) -> Result<()> {
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| Error::InvalidParameter(format!("JSON output failed: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::InvalidParameter(format!("JSON output failed: {e}")))?;
    }
    Ok(())
}
