use rayon::prelude::*;

use super::{cell_seed, identification_row, measure, repeat_seed, CellKey, Measurement, SWEEP_TAG};
use super::{ExperimentConfig, SweepRow};
use crate::error::Result;

/// Bounds, coverage and certification for every `(N, γ)` cell on the
/// configured system. Rows are ordered by `N`, then `γ`.
pub fn run_bound_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let sys = cfg.system.matrices();
    let jobs: Vec<(usize, usize)> =
        (0..cfg.rollout_counts.len()).flat_map(|ni| (0..cfg.repeats).map(move |r| (ni, r))).collect();
    let results: Vec<Vec<Measurement>> = jobs
        .par_iter()
        .map(|&(ni, r)| {
            let seed = repeat_seed(cell_seed(cfg.seed, SWEEP_TAG, 0, 0, ni), r);
            measure(&sys, &cfg.noise, cfg, cfg.rollout_counts[ni], &cfg.gammas, seed)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(cfg.rollout_counts.len() * cfg.gammas.len());
    for (ni, &n_rollouts) in cfg.rollout_counts.iter().enumerate() {
        let cell = &results[ni * cfg.repeats..(ni + 1) * cfg.repeats];
        for (gi, &gamma) in cfg.gammas.iter().enumerate() {
            let ms: Vec<&Measurement> = cell.iter().map(|per_gamma| &per_gamma[gi]).collect();
            let key = CellKey {
                experiment: "sweep",
                system: cfg.system.label(),
                n_rollouts,
                gamma,
                sigma_w: cfg.noise.sigma_w,
                seed: cell_seed(cfg.seed, SWEEP_TAG, 0, 0, ni),
            };
            rows.push(identification_row(&key, cfg, &ms));
        }
    }
    Ok(rows)
}
