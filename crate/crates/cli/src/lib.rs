//! Experiment harness for the `memsim` simulator.
//!
//! A run reads one TOML config, executes the named experiment and writes its
//! tables plus a `manifest.json` into the output directory.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

use std::path::PathBuf;

use clap::Parser;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

/// Output directory override.
pub const OUT_ENV: &str = "MEMSIM_OUT";
/// Worker thread cap.
pub const THREADS_ENV: &str = "MEMSIM_THREADS";

#[derive(Debug, Clone, Parser)]
#[command(name = "memsim", version, about = "Run a mem-element crossbar simulation experiment")]
pub struct Args {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config and MEMSIM_OUT.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps; overrides the config and MEMSIM_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Allow CIFAR-10 / VGG-8 training.
    #[arg(long)]
    pub long_run: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub config: ExperimentConfig,
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

/// Load the config, apply overrides and run it.
pub fn run(args: &Args) -> CliResult<RunOutcome> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.is_long_run() && !args.long_run {
        return Err(CliError::Config("CIFAR-10 / VGG-8 training requires --long-run".into()));
    }
    let env_threads = match env_var(THREADS_ENV) {
        Some(v) => Some(v.parse::<usize>().map_err(|_| CliError::Config(format!("{THREADS_ENV}={v} is not a count")))?),
        None => None,
    };
    let threads = args.threads.or(env_threads).or(cfg.threads);
    if threads == Some(0) {
        return Err(CliError::Config("thread count must be at least 1".into()));
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| env_var(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("memsim-out").join(cfg.experiment.name()));
    let files = run_config(&cfg, &out_dir, threads)?;
    Ok(RunOutcome { out_dir, files, config: cfg })
}

/// Run an already validated config, writing into `out_dir`.
pub fn run_config(cfg: &ExperimentConfig, out_dir: &std::path::Path, threads: Option<usize>) -> CliResult<Vec<PathBuf>> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    let tables = pool.install(|| experiments::dispatch(cfg))?;
    report::emit_report(out_dir, &tables, &cfg.format, cfg.experiment.name(), cfg.seed, &cfg.to_json())
}
