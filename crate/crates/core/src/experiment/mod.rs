//! Experiment orchestration: the RMSE comparison, the bound sweep over
//! `(N, γ)` and the observer cost evaluation. Every random draw derives from
//! `(master seed, experiment, cell, repeat)`, jobs run on the rayon pool and
//! results are aggregated in a fixed order, so output does not depend on the
//! thread count.

mod config;
mod observer_eval;
mod rows;
mod sweep;
mod table2;

pub use config::{ExperimentConfig, SystemChoice};
pub use observer_eval::{run_observer_eval, ObserverEvalOutput, ObserverRecord};
pub use rows::{format_float, write_json_lines, write_sweep_csv, SweepRow, SWEEP_FIELDS};
pub use sweep::run_bound_sweep;
pub use table2::{run_table2, Table2Output, Table2Summary};

use crate::bounds::{compute_bounds, grid_contains, BoundParams, BoundResult};
use crate::error::{Error, Result};
use crate::estimator::{assemble_regression_data, estimate_ols, estimate_svr, rmse, Assembly, Estimate};
use crate::lti_sim::{collect_rollouts, mix_seed, NoiseSpec, SystemMatrices};
use crate::numerics::spectral_norm;
use crate::observer_design::{design_gain, IntervalMatrix, StabilityCertificate};

const TABLE2_TAG: u64 = 1;
const SWEEP_TAG: u64 = 2;
const OBSERVER_TAG: u64 = 3;

/// Seed of one aggregated cell. `γ` is deliberately absent so every `γ`
/// sees the same data (common random numbers).
fn cell_seed(master: u64, experiment: u64, system: usize, sigma: usize, n_index: usize) -> u64 {
    mix_seed(&[master, experiment, system as u64, sigma as u64, n_index as u64])
}

fn repeat_seed(cell: u64, repeat: usize) -> u64 {
    mix_seed(&[cell, repeat as u64])
}

/// Everything measured from one identification at one `γ`.
#[derive(Debug, Clone)]
struct Measurement {
    rmse_a_ols: f64,
    rmse_b_ols: f64,
    rmse_a_svr: f64,
    rmse_b_svr: f64,
    covered_delta: bool,
    covered_param: bool,
    covered_eps: bool,
    certified_stable: bool,
    center_offset: f64,
    max_abs_delta: f64,
    est: Estimate,
    bounds: BoundResult,
    design: Option<StabilityCertificate>,
}

/// Collects `N` rollouts, fits OLS once and SVR at every `γ`, and evaluates
/// bounds, coverage and gain design for each.
fn measure(
    sys: &SystemMatrices,
    noise: &NoiseSpec,
    cfg: &ExperimentConfig,
    n_rollouts: usize,
    gammas: &[f64],
    seed: u64,
) -> Result<Vec<Measurement>> {
    let data = collect_rollouts(sys, noise, n_rollouts, cfg.t0, seed)?;
    let reg = assemble_regression_data(&data, Assembly::AllData)?;
    let (rmse_a_ols, rmse_b_ols) = rmse(&estimate_ols(&reg)?, sys)?;
    gammas
        .iter()
        .map(|&gamma| {
            let est = estimate_svr(&reg, gamma, cfg.estimator_scaling)?;
            let (rmse_a_svr, rmse_b_svr) = rmse(&est, sys)?;
            let params = BoundParams {
                n: sys.n(),
                m: sys.m(),
                big_m: cfg.big_m,
                delta: cfg.delta,
                gamma,
                n_rollouts,
                t0: cfg.t0,
                sigma_u: noise.sigma_u,
                sigma_w: noise.sigma_w,
            };
            let bounds = compute_bounds(&est, &params)?;
            let delta_a = &sys.a - &est.a_hat;
            let delta_b = &sys.b - &est.b_hat;
            let covered_delta = grid_contains(&bounds.delta_a_intervals, &delta_a);
            let covered_param = grid_contains(&bounds.a_intervals, &sys.a);
            let covered_eps = spectral_norm(&delta_a, &cfg.tolerances)? <= bounds.eps_a
                && spectral_norm(&delta_b, &cfg.tolerances)? <= bounds.eps_b;
            let certified_stable = bounds
                .a_intervals
                .iter()
                .map(|row| row.iter().map(|iv| iv.center.abs() + iv.radius).sum::<f64>())
                .fold(0.0, f64::max)
                < 1.0;
            let interval = IntervalMatrix::from_grid(&bounds.a_intervals, 1.0 - cfg.delta)?;
            let design = match design_gain(&interval, &sys.c, &cfg.design_targets) {
                Ok(cert) => Some(cert),
                Err(Error::Infeasible) => None,
                Err(e) => return Err(e),
            };
            Ok(Measurement {
                rmse_a_ols,
                rmse_b_ols,
                rmse_a_svr,
                rmse_b_svr,
                covered_delta,
                covered_param,
                covered_eps,
                certified_stable,
                center_offset: est.a_hat.max_abs() * gamma,
                max_abs_delta: delta_a.max_abs(),
                est,
                bounds,
                design,
            })
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    crate::performance::kahan_sum(&v) / v.len() as f64
}

fn fraction<'a>(ms: &[&'a Measurement], pred: impl Fn(&'a Measurement) -> bool) -> f64 {
    ms.iter().filter(|m| pred(m)).count() as f64 / ms.len() as f64
}

/// Cell label and coordinates of one output row.
struct CellKey<'a> {
    experiment: &'a str,
    system: &'a str,
    n_rollouts: usize,
    gamma: f64,
    sigma_w: f64,
    seed: u64,
}

/// Aggregates the identification columns; cost columns are left empty.
fn identification_row(key: &CellKey, cfg: &ExperimentConfig, ms: &[&Measurement]) -> SweepRow {
    let first = &ms[0].bounds;
    SweepRow {
        n_rollouts: key.n_rollouts,
        gamma: key.gamma,
        sigma_w: key.sigma_w,
        rmse_a_ols: mean(ms.iter().map(|m| m.rmse_a_ols)),
        rmse_a_svr: mean(ms.iter().map(|m| m.rmse_a_svr)),
        rmse_b_ols: mean(ms.iter().map(|m| m.rmse_b_ols)),
        rmse_b_svr: mean(ms.iter().map(|m| m.rmse_b_svr)),
        h_a: first.h_a,
        h_b: first.h_b,
        eps_a: mean(ms.iter().map(|m| m.bounds.eps_a)),
        eps_b: mean(ms.iter().map(|m| m.bounds.eps_b)),
        coverage_a: fraction(ms, |m| m.covered_delta),
        gain_feasible: fraction(ms, |m| m.design.is_some()),
        j_mc: None,
        j_bound: None,
        seed: key.seed,
        experiment: key.experiment.to_string(),
        system: key.system.to_string(),
        n0: (cfg.t0 - 1) * key.n_rollouts,
        estimator_scaling: cfg.estimator_scaling,
        repeats: ms.len(),
        coverage_a_param: fraction(ms, |m| m.covered_param),
        coverage_eps_a: fraction(ms, |m| m.covered_eps),
        a_certified_stable: fraction(ms, |m| m.certified_stable),
        radius_a: first.radius_a(),
        center_offset_a: mean(ms.iter().map(|m| m.center_offset)),
        max_abs_delta_a: mean(ms.iter().map(|m| m.max_abs_delta)),
        j_mc_stderr: None,
        j_var: None,
        delta_j: None,
        delta_j_stderr: None,
        cost_ratio: None,
        j_opt_bound: None,
    }
}

/// Systems an RMSE comparison runs on: both benchmarks unless a custom
/// system is configured.
fn comparison_systems(cfg: &ExperimentConfig) -> Vec<SystemChoice> {
    match &cfg.system {
        SystemChoice::Custom(_) => vec![cfg.system.clone()],
        _ => vec![SystemChoice::Stable, SystemChoice::Unstable],
    }
}
