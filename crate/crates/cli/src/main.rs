//! `corrml`: batch front end for the forward and inverse corrosion models.
//!
//! Every command accepts `--config FILE` (TOML), lets flags override it, and
//! writes `<command>.resolved.toml` into its output directory; re-running
//! with `--config` pointing at that file repeats the run exactly.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 training or
//! numerical failure. `CORRML_THREADS` caps the worker threads.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use corrml::dataset::{Basis, GradeMap};
use corrml::forward::ForwardKind;
use corrml::preprocess::FeatureSet;
use corrml_cli::config;

use config::Direction;

#[derive(Parser, Debug)]
#[command(name = "corrml", version, about = "Corrosion-rate models for alloys")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration (TOML); flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Dataset: an ingest-format CSV or a dataset file from `ingest`.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset CSV.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
        /// Log-scale noise standard deviation.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Validate a CSV and write the normalized dataset plus a summary table.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Composition basis of the file: `wt` or `at`.
        #[arg(long)]
        units: Option<Basis>,
        /// Rates for grade-only rows, e.g. `A=1,B=5,C=20,D=50`.
        #[arg(long)]
        grade_map: Option<GradeMap>,
    },
    /// Fit one forward model and score it on the held-out split.
    TrainForward {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// rf, dnn, gpr or loggpr.
        #[arg(long)]
        model: Option<ForwardKind>,
        /// comp, comp+env, comp+env+temp, comp+env+dur or comp+env+temp+dur.
        #[arg(long)]
        features: Option<FeatureSet>,
    },
    /// Score every configured model on every configured feature set.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fit the inverse ensemble and score it on the held-out split.
    TrainInverse {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Score a query CSV with a trained forward model or inverse ensemble.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        direction: Option<Direction>,
        /// Model file.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Query CSV.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Render SVG charts from the CSVs in a directory.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory holding metrics, pairs or inverse CSVs.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Training(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Invalid(e)
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("CORRML_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow::anyhow!("CORRML_THREADS must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = configure_threads().map_err(Failure::from).and_then(|()| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Training(e)) => {
            eprintln!("training failed: {e:#}");
            ExitCode::from(2)
        }
    }
}
