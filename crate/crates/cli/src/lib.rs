//! Batch entry points: `reachsafe {gen-demos|learn|solve|compare|eval}`.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::RunConfig;

pub const THREADS_ENV: &str = "REACHSAFE_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] reachsafe_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 3 for numerical aborts, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(reachsafe_core::Error::Numerical(_) | reachsafe_core::Error::NonFinite(_)) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "reachsafe", version, about = "Safety-concept toolkit: demonstrations, HOCBF learning, HJ reachability")]
pub struct Cli {
    /// Worker threads for data-parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config entry, e.g. `--set weights.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a demonstration corpus.
    GenDemos(ConfigArgs),
    /// Fit HOCBF class-K parameters to demonstrations.
    Learn(ConfigArgs),
    /// Solve an HJ value field and write a concept bundle.
    Solve(ConfigArgs),
    /// Confusion matrix, level sets and control sets of two concepts.
    Compare(ConfigArgs),
    /// Percentiles of a concept's values over a driving log.
    Eval(ConfigArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenDemos(_) => "gen-demos",
            Command::Learn(_) => "learn",
            Command::Solve(_) => "solve",
            Command::Compare(_) => "compare",
            Command::Eval(_) => "eval",
        }
    }

    fn args(&self) -> &ConfigArgs {
        match self {
            Command::GenDemos(a) | Command::Learn(a) | Command::Solve(a) | Command::Compare(a) | Command::Eval(a) => a,
        }
    }
}

/// Worker count: `REACHSAFE_THREADS`, then `--threads`, then all cores.
pub fn worker_count(flag: Option<usize>) -> Result<usize, CliError> {
    if let Ok(s) = std::env::var(THREADS_ENV) {
        return match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{s}`"))),
        };
    }
    match flag {
        Some(0) => Err(CliError::Config("--threads must be positive".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs one command and returns the path of its manifest.
pub fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let threads = worker_count(cli.threads)?;
    let args = cli.command.args();
    let cfg = RunConfig::load(&args.config, &args.sets)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    log::info!("{} with {threads} worker(s), config hash {}", cli.command.name(), cfg.hash());
    pool.install(|| match &cli.command {
        Command::GenDemos(_) => commands::gen_demos::run(&cfg),
        Command::Learn(_) => commands::learn::run(&cfg),
        Command::Solve(_) => commands::solve::run(&cfg),
        Command::Compare(_) => commands::compare::run(&cfg),
        Command::Eval(_) => commands::eval::run(&cfg),
    })
}
