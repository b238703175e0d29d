use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use tfg_observer::config::parse_config;
use tfg_observer::immersion::{direction_table, rank_condition, RankReport};
use tfg_observer::parallel::{par_map, THREADS_ENV};
use tfg_observer::scenarios::{
    build_spec, run_scenario, RunSummary, ScenarioConfig, TrajectoryLog,
};
use tfg_observer::Error;

#[derive(Parser)]
#[command(
    name = "tfg-observer",
    version,
    about = "Immersion observer simulator on two-frame groups"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory.csv and summary.json.
    Run(Common),
    /// Run consecutive seeds in parallel, one subdirectory per seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, starting at the configured (or overridden) seed.
        #[arg(long, default_value_t = 8)]
        seeds: u64,
    },
    /// Run with the Gramian monitor on and write gramian.csv.
    Gramian(Common),
    /// Report the rank condition of the configured measurement set.
    CheckRank(Common),
}

#[derive(Args)]
struct Common {
    /// JSON scenario configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Log every k-th step.
    #[arg(long)]
    decimate: Option<usize>,
    /// Only print errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) | Error::InternalConsistency(_) => {
                Failure::Numerical(e.to_string())
            }
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn load(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = parse_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(k) = common.decimate {
        cfg.decimate = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes next to the target and renames, so a failed run leaves nothing
/// half-written.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| io_failure(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_failure(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
    s.push('\n');
    s
}

fn write_run(dir: &Path, log: &TrajectoryLog) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    write_atomic(&dir.join("trajectory.csv"), &log.to_csv())?;
    write_atomic(&dir.join("summary.json"), &to_json(&log.summary))
}

fn report(summary: &RunSummary) {
    for w in &summary.warnings {
        warn!("{w}");
    }
    info!(
        "seed {}: t = {}, err_metric = {:e}, log slope = {:.4}/s",
        summary.seed, summary.final_t, summary.final_err_metric, summary.log_slope
    );
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let log = run_scenario(&cfg)?;
    write_run(&common.out, &log)?;
    report(&log.summary);
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary {
    runs: usize,
    seeds: Vec<u64>,
    slope_mean: f64,
    slope_std: f64,
    slope_min: f64,
    slope_max: f64,
    final_err_metric_max: f64,
    ges_eligible: bool,
}

fn sweep_summary(summaries: &[RunSummary]) -> SweepSummary {
    let slopes: Vec<f64> = summaries.iter().map(|s| s.log_slope).collect();
    let n = slopes.len() as f64;
    let mean = slopes.iter().sum::<f64>() / n;
    let var = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    SweepSummary {
        runs: summaries.len(),
        seeds: summaries.iter().map(|s| s.seed).collect(),
        slope_mean: mean,
        slope_std: var.sqrt(),
        slope_min: slopes.iter().cloned().fold(f64::INFINITY, f64::min),
        slope_max: slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        final_err_metric_max: summaries
            .iter()
            .map(|s| s.final_err_metric)
            .fold(0.0, f64::max),
        ges_eligible: summaries.iter().all(|s| s.ges_eligible),
    }
}

fn cmd_sweep(common: &Common, seeds: u64) -> Result<(), Failure> {
    if seeds == 0 {
        return Err(Failure::Config("--seeds must be at least 1".into()));
    }
    let base = load(common)?;
    let cfgs: Vec<ScenarioConfig> = (0..seeds)
        .map(|k| {
            let mut c = base.clone();
            c.seed = base.seed + k;
            c
        })
        .collect();
    if let Ok(n) = std::env::var(THREADS_ENV) {
        info!("{THREADS_ENV} = {n}");
    }
    let results = par_map(&cfgs, |c| {
        let log = run_scenario(c).map_err(|e| (c.seed, Failure::from(e)))?;
        write_run(&common.out.join(format!("seed_{}", c.seed)), &log).map_err(|e| (c.seed, e))?;
        Ok::<_, (u64, Failure)>(log.summary)
    });
    let mut summaries = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(s) => summaries.push(s),
            Err((seed, e)) => {
                return Err(match e {
                    Failure::Config(m) => Failure::Config(format!("seed {seed}: {m}")),
                    Failure::Numerical(m) => Failure::Numerical(format!("seed {seed}: {m}")),
                })
            }
        }
    }
    for s in &summaries {
        report(s);
    }
    let agg = sweep_summary(&summaries);
    write_atomic(&common.out.join("sweep_summary.json"), &to_json(&agg))?;
    info!(
        "{} runs, slope {:.4} +- {:.4}/s, worst final err_metric {:e}",
        agg.runs, agg.slope_mean, agg.slope_std, agg.final_err_metric_max
    );
    Ok(())
}

fn cmd_gramian(common: &Common) -> Result<(), Failure> {
    let mut cfg = load(common)?;
    cfg.gramian.enabled = true;
    let log = run_scenario(&cfg)?;
    write_run(&common.out, &log)?;
    let mut csv = String::from("t,gram_obs_min,gram_det_min\n");
    for r in &log.rows {
        csv.push_str(&format!(
            "{:.16e},{:.16e},{:.16e}\n",
            r.t, r.gram_obs_min, r.gram_det_min
        ));
    }
    write_atomic(&common.out.join("gramian.csv"), &csv)?;
    report(&log.summary);
    info!(
        "windowed lambda_min: observability {:e}, determinability {:e}",
        log.summary.gram_obs_min, log.summary.gram_det_min
    );
    Ok(())
}

#[derive(Serialize)]
struct RankOutput {
    #[serde(flatten)]
    report: RankReport,
    singular_values: Vec<f64>,
}

fn cmd_check_rank(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let spec = build_spec(&cfg)?;
    let table = direction_table(&spec);
    let out = RankOutput {
        report: rank_condition(&table),
        singular_values: table.singular_values().iter().cloned().collect(),
    };
    fs::create_dir_all(&common.out).map_err(|e| io_failure(&common.out, e))?;
    let json = to_json(&out);
    write_atomic(&common.out.join("rank.json"), &json)?;
    if !common.quiet {
        print!("{json}");
    }
    if !out.report.ges_eligible {
        warn!("rank {} < {}", out.report.rank, out.report.required);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Run(c) | Command::Gramian(c) | Command::CheckRank(c) => c,
        Command::Sweep { common, .. } => common,
    };
    let level = if common.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep { common, seeds } => cmd_sweep(common, *seeds),
        Command::Gramian(c) => cmd_gramian(c),
        Command::CheckRank(c) => cmd_check_rank(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.code())
        }
    }
}
