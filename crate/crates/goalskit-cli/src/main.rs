//! Command-line front end: simulate datasets, score them with any of the
//! implemented methods, evaluate rankings against truth, and benchmark.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error.

mod bench;
mod eval;
mod manifest;
mod score;
mod simulate;

use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use goalskit_core::ErrorClass;

#[derive(Parser, Debug)]
#[command(name = "goalskit", version, about = "Variable importance for nonparametric regression: simultaneous local and global scores, baselines, simulation, and ranking evaluation")]
struct Cli {
    /// Worker threads (default: all cores; the GOALSKIT_THREADS environment
    /// variable overrides this flag).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand, Debug)]
enum Commands {
    /// Generate synthetic datasets with known causal structure.
    Simulate(simulate::SimulateArgs),
    /// Fit a model and write local/global importance reports.
    Score(score::ScoreArgs),
    /// Compare report rankings against simulation truth (ROC / AUC).
    Eval(eval::EvalArgs),
    /// Time the scoring stage over a grid of dataset sizes.
    Bench(bench::BenchArgs),
}

/// Command-line-level mistakes (bad flag combinations, malformed auxiliary
/// files) that should exit 2 like clap's own parse failures.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// Parse an optional JSON config file into the command's config struct;
/// absent file means all-defaults. Unknown keys are rejected so typos fail
/// loudly instead of silently falling back to defaults.
pub fn load_file_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            let cfg = serde_json::from_str(&text)
                .map_err(|e| usage(format!("config {}: {e}", p.display())))?;
            Ok(cfg)
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<()> {
    let from_env = match std::env::var("GOALSKIT_THREADS") {
        Ok(v) => Some(
            v.parse::<usize>()
                .map_err(|_| usage(format!("GOALSKIT_THREADS must be an integer, got '{v}'")))?,
        ),
        Err(_) => None,
    };
    if let Some(threads) = from_env.or(flag) {
        if threads == 0 {
            return Err(usage("thread count must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
        log::info!("using {threads} worker threads");
    }
    Ok(())
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<goalskit_core::Error>().map(|e| e.class()) {
        Some(ErrorClass::Numerical) => 4,
        Some(ErrorClass::Data) | None => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    resolve_threads(cli.threads)?;
    match cli.command {
        Commands::Simulate(args) => simulate::run(args),
        Commands::Score(args) => score::run(args),
        Commands::Eval(args) => eval::run(args),
        Commands::Bench(args) => bench::run(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
