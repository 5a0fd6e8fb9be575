use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{cell_seed, comparison_systems, identification_row, measure, repeat_seed, CellKey, Measurement, TABLE2_TAG};
use super::{ExperimentConfig, SweepRow};
use crate::error::Result;
use crate::performance::mean_and_variance;

/// Per `(system, σ_w)` comparison of OLS and SVR pooled over every sample
/// length and repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Summary {
    pub system: String,
    pub sigma_w: f64,
    pub gamma: f64,
    pub samples: usize,
    pub rmse_a_ols: f64,
    pub rmse_a_svr: f64,
    pub rmse_b_ols: f64,
    pub rmse_b_svr: f64,
    /// Paired t statistic of `rmse_b_ols − rmse_b_svr`.
    pub t_stat_b: f64,
    /// One-sided p-value for "SVR has the smaller `B` error".
    pub p_value_b: f64,
    /// `p_value_b < 0.05`.
    pub svr_better_b: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table2Output {
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<Table2Summary>,
}

/// OLS against SVR at `table2_gamma` for every `σ_w` in `table2_sigma_ws`,
/// every sample length and `repeats` repetitions, on both benchmark systems.
pub fn run_table2(cfg: &ExperimentConfig) -> Result<Table2Output> {
    cfg.validate()?;
    let systems = comparison_systems(cfg);
    let gamma = cfg.table2_gamma;
    let mut jobs = Vec::new();
    for (si, _) in systems.iter().enumerate() {
        for (wi, _) in cfg.table2_sigma_ws.iter().enumerate() {
            for (ni, _) in cfg.rollout_counts.iter().enumerate() {
                for r in 0..cfg.repeats {
                    jobs.push((si, wi, ni, r));
                }
            }
        }
    }
    let matrices: Vec<_> = systems.iter().map(|s| s.matrices()).collect();
    let results: Vec<Measurement> = jobs
        .par_iter()
        .map(|&(si, wi, ni, r)| {
            let noise = crate::lti_sim::NoiseSpec { sigma_w: cfg.table2_sigma_ws[wi], ..cfg.noise };
            let seed = repeat_seed(cell_seed(cfg.seed, TABLE2_TAG, si, wi, ni), r);
            let mut ms = measure(&matrices[si], &noise, cfg, cfg.rollout_counts[ni], &[gamma], seed)?;
            Ok(ms.remove(0))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let per_cell = cfg.repeats;
    let per_block = per_cell * cfg.rollout_counts.len();
    for (si, system) in systems.iter().enumerate() {
        for (wi, &sigma_w) in cfg.table2_sigma_ws.iter().enumerate() {
            let block_start = (si * cfg.table2_sigma_ws.len() + wi) * per_block;
            let block: Vec<&Measurement> = results[block_start..block_start + per_block].iter().collect();
            for (ni, &n_rollouts) in cfg.rollout_counts.iter().enumerate() {
                let key = CellKey {
                    experiment: "table2",
                    system: system.label(),
                    n_rollouts,
                    gamma,
                    sigma_w,
                    seed: cell_seed(cfg.seed, TABLE2_TAG, si, wi, ni),
                };
                rows.push(identification_row(&key, cfg, &block[ni * per_cell..(ni + 1) * per_cell]));
            }
            summaries.push(summarize(system.label(), sigma_w, gamma, &block));
        }
    }
    Ok(Table2Output { rows, summaries })
}

fn summarize(system: &str, sigma_w: f64, gamma: f64, ms: &[&Measurement]) -> Table2Summary {
    let k = ms.len();
    let avg = |f: fn(&Measurement) -> f64| mean_and_variance(&ms.iter().map(|m| f(m)).collect::<Vec<_>>()).0;
    let diffs: Vec<f64> = ms.iter().map(|m| m.rmse_b_ols - m.rmse_b_svr).collect();
    let (d_mean, d_var) = mean_and_variance(&diffs);
    let (t_stat_b, p_value_b) = if k >= 2 && d_var > 0.0 {
        let t = d_mean / (d_var / k as f64).sqrt();
        let dist = StudentsT::new(0.0, 1.0, (k - 1) as f64).expect("positive degrees of freedom");
        (t, 1.0 - dist.cdf(t))
    } else {
        (f64::NAN, f64::NAN)
    };
    Table2Summary {
        system: system.to_string(),
        sigma_w,
        gamma,
        samples: k,
        rmse_a_ols: avg(|m| m.rmse_a_ols),
        rmse_a_svr: avg(|m| m.rmse_a_svr),
        rmse_b_ols: avg(|m| m.rmse_b_ols),
        rmse_b_svr: avg(|m| m.rmse_b_svr),
        t_stat_b,
        p_value_b,
        svr_better_b: p_value_b < 0.05,
    }
}
