use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sysid_core::bounds::{compute_bounds, BoundParams, BoundResult, IntervalGrid};
use sysid_core::estimator::{assemble_regression_data, estimate_ols, estimate_svr, Assembly, Estimate};
use sysid_core::experiment::{
    format_float, run_bound_sweep, run_observer_eval, run_table2, write_json_lines, write_sweep_csv,
    ExperimentConfig, SweepRow,
};
use sysid_core::lti_sim::{collect_rollouts, RngStream, RolloutSet};
use sysid_core::numerics::spectral_radius;
use sysid_core::observer_design::{design_gain, kalman_gain, IntervalMatrix, StabilityCertificate};
use sysid_core::performance::{evaluate_performance, ObserverLoop};
use sysid_core::{Error, Matrix};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Identification of noisy LTI systems from multiple rollouts, error bounds
/// and certified observer design.
#[derive(Debug, Parser)]
#[command(name = "sysid", version)]
struct Cli {
    /// JSON config file, or `default` for the built-in setup.
    #[arg(long, global = true, default_value = "default")]
    config: String,
    /// Master seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Worker threads; falls back to SYSID_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `design` and `evaluate` exit with status 3 when a gain design is infeasible.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct SingleRun {
    /// Number of rollouts; defaults to the largest configured count.
    #[arg(long)]
    n_rollouts: Option<usize>,
    /// Regularization weight; defaults to the configured comparison value.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect rollouts of the configured system.
    Simulate(SingleRun),
    /// Fit OLS and SVR estimates from one data set.
    Estimate {
        #[command(flatten)]
        run: SingleRun,
        /// Use only the last transition of each rollout.
        #[arg(long)]
        final_only: bool,
    },
    /// Estimate and compute the error bounds.
    Bounds(SingleRun),
    /// Estimate, bound and design a certified observer gain.
    Design(SingleRun),
    /// Observer cost experiment over (N, gamma); `--single` evaluates one observer.
    Evaluate {
        #[command(flatten)]
        run: SingleRun,
        #[arg(long)]
        single: bool,
    },
    /// OLS versus SVR error comparison.
    Table2,
    /// Error-bound sweep over (N, gamma).
    Sweep,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(EXIT_FAILURE, e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_FAILURE, format!("cannot write `{}`: {e}", path.display()))
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = if cli.config == "default" {
        ExperimentConfig::default()
    } else {
        let text = fs::read_to_string(&cli.config)
            .map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot read config file `{}`: {e}", cli.config)))?;
        ExperimentConfig::from_json_str(&text)
            .map_err(|e| Failure::new(EXIT_CONFIG, format!("config file `{}`: {e}", cli.config)))?
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| Failure::new(EXIT_CONFIG, format!("config `{}`: {e}", cli.config)))?;
    Ok(cfg)
}

fn configure_threads(cli: &Cli) -> CliResult<()> {
    let threads = match cli.threads {
        Some(k) => Some(k),
        None => match std::env::var("SYSID_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                Failure::new(EXIT_CONFIG, format!("SYSID_THREADS must be a positive integer, got `{v}`"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(k) = threads {
        if k == 0 {
            return Err(Failure::new(EXIT_CONFIG, "thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::new(EXIT_FAILURE, format!("cannot start thread pool: {e}")))?;
    }
    Ok(())
}

struct Output {
    dir: PathBuf,
    format: Format,
}

impl Output {
    fn create(&self, stem: &str) -> CliResult<(PathBuf, BufWriter<File>)> {
        let path = self.dir.join(format!("{stem}.{}", self.format.ext()));
        let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
        Ok((path, BufWriter::new(file)))
    }

    fn finish(path: &Path, mut w: BufWriter<File>) -> CliResult<()> {
        w.flush().map_err(|e| io_failure(path, e))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn sweep_rows(&self, stem: &str, rows: &[SweepRow]) -> CliResult<()> {
        let (path, mut w) = self.create(stem)?;
        match self.format {
            Format::Csv => write_sweep_csv(rows, &mut w)?,
            Format::Json => write_json_lines(rows, &mut w)?,
        }
        Self::finish(&path, w)
    }

    /// Flat serializable records: CSV via serde, or NDJSON.
    fn records<T: Serialize>(&self, stem: &str, records: &[T]) -> CliResult<()> {
        let (path, mut w) = self.create(stem)?;
        match self.format {
            Format::Csv => {
                let mut cw = csv::Writer::from_writer(&mut w);
                for r in records {
                    cw.serialize(r).map_err(|e| io_failure(&path, e))?;
                }
                cw.flush().map_err(|e| io_failure(&path, e))?;
            }
            Format::Json => write_json_lines(records, &mut w)?,
        }
        Self::finish(&path, w)
    }

    /// A table given as header plus string rows; JSON output uses `doc`.
    fn table<T: Serialize>(&self, stem: &str, header: &[String], rows: &[Vec<String>], doc: &T) -> CliResult<()> {
        let (path, mut w) = self.create(stem)?;
        match self.format {
            Format::Csv => {
                let mut cw = csv::Writer::from_writer(&mut w);
                cw.write_record(header).map_err(|e| io_failure(&path, e))?;
                for r in rows {
                    cw.write_record(r).map_err(|e| io_failure(&path, e))?;
                }
                cw.flush().map_err(|e| io_failure(&path, e))?;
            }
            Format::Json => {
                serde_json::to_writer(&mut w, doc).map_err(|e| io_failure(&path, e))?;
                writeln!(w).map_err(|e| io_failure(&path, e))?;
            }
        }
        Self::finish(&path, w)
    }
}

fn single_params(cfg: &ExperimentConfig, run: &SingleRun) -> CliResult<(usize, f64)> {
    let n = run.n_rollouts.unwrap_or_else(|| cfg.rollout_counts.iter().copied().max().unwrap_or(1));
    let gamma = run.gamma.unwrap_or(cfg.table2_gamma);
    if n == 0 || !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Failure::new(EXIT_CONFIG, format!("need --n-rollouts >= 1 and --gamma >= 0, got {n} and {gamma}")));
    }
    Ok((n, gamma))
}

fn collect(cfg: &ExperimentConfig, n: usize) -> CliResult<RolloutSet> {
    Ok(collect_rollouts(&cfg.system.matrices(), &cfg.noise, n, cfg.t0, cfg.seed)?)
}

fn bound_params(cfg: &ExperimentConfig, n: usize, gamma: f64) -> BoundParams {
    let sys = cfg.system.matrices();
    BoundParams {
        n: sys.n(),
        m: sys.m(),
        big_m: cfg.big_m,
        delta: cfg.delta,
        gamma,
        n_rollouts: n,
        t0: cfg.t0,
        sigma_u: cfg.noise.sigma_u,
        sigma_w: cfg.noise.sigma_w,
    }
}

fn identify(cfg: &ExperimentConfig, n: usize, gamma: f64) -> CliResult<(Estimate, BoundResult)> {
    let data = collect(cfg, n)?;
    let reg = assemble_regression_data(&data, Assembly::AllData)?;
    let est = estimate_svr(&reg, gamma, cfg.estimator_scaling)?;
    let bounds = compute_bounds(&est, &bound_params(cfg, n, gamma))?;
    Ok((est, bounds))
}

fn design(cfg: &ExperimentConfig, bounds: &BoundResult) -> CliResult<Option<StabilityCertificate>> {
    let interval = IntervalMatrix::from_grid(&bounds.a_intervals, 1.0 - cfg.delta)?;
    match design_gain(&interval, &cfg.system.matrices().c, &cfg.design_targets) {
        Ok(cert) => Ok(Some(cert)),
        Err(Error::Infeasible) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (0..count).map(move |i| format!("{prefix}{i}"))
}

fn cells(values: &[f64]) -> impl Iterator<Item = String> + '_ {
    values.iter().map(|v| format_float(*v))
}

fn cmd_simulate(cfg: &ExperimentConfig, out: &Output, run: &SingleRun) -> CliResult<()> {
    let (n, _) = single_params(cfg, run)?;
    let data = collect(cfg, n)?;
    let (nx, nu) = data.dims();
    let ny = data.rollouts[0].outputs[0].len();
    let header: Vec<String> = ["rollout".to_string(), "k".to_string()]
        .into_iter()
        .chain(numbered("x", nx))
        .chain(numbered("u", nu))
        .chain(numbered("y", ny))
        .collect();
    let mut rows = Vec::new();
    for (i, r) in data.rollouts.iter().enumerate() {
        for k in 0..r.states.len() {
            let mut row = vec![i.to_string(), k.to_string()];
            row.extend(cells(&r.states[k]));
            match r.inputs.get(k) {
                Some(u) => row.extend(cells(u)),
                None => row.extend(std::iter::repeat_n(String::new(), nu)),
            }
            row.extend(cells(&r.outputs[k]));
            rows.push(row);
        }
    }
    out.table("rollouts", &header, &rows, &data)
}

fn matrix_rows(rows: &mut Vec<Vec<String>>, label: &[String], name: &str, m: &Matrix) {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let mut row = label.to_vec();
            row.extend([name.to_string(), i.to_string(), j.to_string(), format_float(m[(i, j)])]);
            rows.push(row);
        }
    }
}

fn cmd_estimate(cfg: &ExperimentConfig, out: &Output, run: &SingleRun, final_only: bool) -> CliResult<()> {
    let (n, gamma) = single_params(cfg, run)?;
    let assembly = if final_only { Assembly::FinalData } else { Assembly::AllData };
    let reg = assemble_regression_data(&collect(cfg, n)?, assembly)?;
    let estimates = vec![estimate_ols(&reg)?, estimate_svr(&reg, gamma, cfg.estimator_scaling)?];
    let header: Vec<String> =
        ["mode", "gamma", "assembly", "matrix", "row", "col", "value"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for est in &estimates {
        let label = serde_json::to_value(est).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
        let text = |k: &str| label[k].as_str().unwrap_or_default().to_string();
        let prefix = vec![text("mode"), format_float(est.gamma), text("assembly")];
        matrix_rows(&mut rows, &prefix, "a_hat", &est.a_hat);
        matrix_rows(&mut rows, &prefix, "b_hat", &est.b_hat);
    }
    out.table("estimates", &header, &rows, &estimates)
}

fn interval_rows(rows: &mut Vec<Vec<String>>, name: &str, grid: &IntervalGrid) {
    for (i, row) in grid.iter().enumerate() {
        for (j, iv) in row.iter().enumerate() {
            rows.push(vec![
                name.to_string(),
                i.to_string(),
                j.to_string(),
                format_float(iv.center),
                format_float(iv.radius),
                format_float(iv.lower()),
                format_float(iv.upper()),
            ]);
        }
    }
}

fn cmd_bounds(cfg: &ExperimentConfig, out: &Output, run: &SingleRun) -> CliResult<()> {
    let (n, gamma) = single_params(cfg, run)?;
    let (_, bounds) = identify(cfg, n, gamma)?;
    let header: Vec<String> =
        ["quantity", "row", "col", "center", "radius", "lower", "upper"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    interval_rows(&mut rows, "delta_a", &bounds.delta_a_intervals);
    interval_rows(&mut rows, "delta_b", &bounds.delta_b_intervals);
    interval_rows(&mut rows, "a", &bounds.a_intervals);
    for (name, v) in [
        ("theta_a", bounds.theta_a),
        ("theta_b", bounds.theta_b),
        ("h_a", bounds.h_a),
        ("h_b", bounds.h_b),
        ("eps_a", bounds.eps_a),
        ("eps_b", bounds.eps_b),
    ] {
        let mut row = vec![name.to_string(), String::new(), String::new(), format_float(v)];
        row.extend([String::new(), String::new(), String::new()]);
        rows.push(row);
    }
    out.table("bounds", &header, &rows, &bounds)
}

/// Returns whether a gain was found.
fn cmd_design(cfg: &ExperimentConfig, out: &Output, run: &SingleRun) -> CliResult<bool> {
    let (n, gamma) = single_params(cfg, run)?;
    let (_, bounds) = identify(cfg, n, gamma)?;
    let cert = design(cfg, &bounds)?;
    let Some(cert) = cert else {
        log::warn!("no certified gain for N = {n}, gamma = {gamma}");
        let header = vec!["feasible".to_string()];
        out.table("design", &header, &[vec!["false".to_string()]], &serde_json::json!({ "feasible": false }))?;
        return Ok(false);
    };
    let p = cert.gain.cols();
    let header: Vec<String> = ["row".to_string(), "margin".to_string(), "tau".to_string()]
        .into_iter()
        .chain(numbered("l", p))
        .collect();
    let tau = cert.tau.map(format_float).unwrap_or_default();
    let rows: Vec<Vec<String>> = (0..cert.gain.rows())
        .map(|i| {
            let mut row = vec![i.to_string(), format_float(cert.per_row_margin[i]), tau.clone()];
            row.extend(cells(cert.gain.row(i)));
            row
        })
        .collect();
    out.table("design", &header, &rows, &cert)?;
    Ok(true)
}

/// Returns whether every design succeeded.
fn cmd_evaluate(cfg: &ExperimentConfig, out: &Output, run: &SingleRun, single: bool) -> CliResult<bool> {
    if !single {
        let result = run_observer_eval(cfg)?;
        out.sweep_rows("observer_eval", &result.rows)?;
        out.records("observer_records", &result.records)?;
        return Ok(result.records.iter().all(|r| r.feasible));
    }
    let (n, gamma) = single_params(cfg, run)?;
    let sys = cfg.system.matrices();
    let (est, bounds) = identify(cfg, n, gamma)?;
    let Some(cert) = design(cfg, &bounds)? else {
        log::warn!("no certified gain for N = {n}, gamma = {gamma}; nothing to evaluate");
        return Ok(false);
    };
    let tol = &cfg.tolerances;
    let k_opt = kalman_gain(&sys, &cfg.noise, tol)?;
    let horizon = if spectral_radius(&sys.a, tol)? < 1.0 { cfg.horizon } else { cfg.unstable_horizon };
    let lp = ObserverLoop { truth: sys, est, gain: cert.gain, noise: cfg.noise };
    let stream = RngStream::new(cfg.seed, u64::MAX);
    let report =
        evaluate_performance(&lp, &k_opt, bounds.eps_a, bounds.eps_b, horizon, cfg.burn_in_for(horizon), &stream, tol)?;
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    let header: Vec<String> =
        ["j_mc", "j_mc_stderr", "j_bound", "j_opt_bound", "eps_a", "eps_b", "eps_l", "horizon", "burn_in", "seed"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    let row = vec![
        format_float(report.j_mc),
        format_float(report.j_mc_stderr),
        opt(report.j_bound),
        opt(report.j_opt_bound),
        format_float(report.eps_a),
        format_float(report.eps_b),
        format_float(report.eps_l),
        report.horizon.to_string(),
        report.burn_in.to_string(),
        report.seed.to_string(),
    ];
    out.table("performance", &header, &[row], &report)?;
    Ok(true)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    configure_threads(cli)?;
    fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("cannot create `{}`: {e}", cli.out.display())))?;
    let out = Output { dir: cli.out.clone(), format: cli.format };
    let all_feasible = match &cli.command {
        Command::Simulate(r) => cmd_simulate(&cfg, &out, r).map(|_| true)?,
        Command::Estimate { run, final_only } => cmd_estimate(&cfg, &out, run, *final_only).map(|_| true)?,
        Command::Bounds(r) => cmd_bounds(&cfg, &out, r).map(|_| true)?,
        Command::Design(r) => cmd_design(&cfg, &out, r)?,
        Command::Evaluate { run, single } => cmd_evaluate(&cfg, &out, run, *single)?,
        Command::Table2 => {
            let result = run_table2(&cfg)?;
            out.sweep_rows("table2", &result.rows)?;
            out.records("table2_summary", &result.summaries)?;
            true
        }
        Command::Sweep => {
            out.sweep_rows("sweep", &run_bound_sweep(&cfg)?)?;
            true
        }
    };
    if cli.strict && !all_feasible {
        return Err(Failure::new(EXIT_INFEASIBLE, "gain design infeasible (--strict)"));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
