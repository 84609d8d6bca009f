//! Command-line front end: `generate`, `inspect`, `train`, `evaluate`,
//! `forecast` and `analyze`.
//!
//! Exit codes are 0 on success, 2 for usage, configuration and I/O problems
//! and 3 when training or prediction produced non-finite numbers.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{adaptive_adjacency_of, forecast_input};
pub use config::{EvalSplit, RunConfig};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gswan", version, about = "Graph WaveNet with spatial graph transformer layers for traffic forecasting")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker cap for batched prediction.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Print dataset statistics.
    Inspect(DataArgs),
    /// Fit a model and write checkpoints and the loss history.
    Train(TrainArgs),
    /// Score a checkpoint next to the historical-average and persistence baselines.
    Evaluate(EvaluateArgs),
    /// Predict the horizon following the last observed window.
    Forecast(CheckpointArgs),
    /// Probe node embeddings and compare adjacency matrices.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub sensors: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    /// ring, grid or random(p)
    #[arg(long)]
    pub topology: Option<String>,
    /// speed or flow
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Minutes.
    #[arg(long)]
    pub phase_spread: Option<f64>,
    #[arg(long)]
    pub weekend_factor: Option<f64>,
    /// Add the other metric as an extra channel.
    #[arg(long)]
    pub companion: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// full, no-node-embeddings, single-head or gcn-without-sgt
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Like 7:1:2.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub inputs: CheckpointArgs,
    #[arg(long, value_enum)]
    pub split: Option<EvalSplit>,
    /// Like 7:1:2.
    #[arg(long)]
    pub split_ratio: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub inputs: CheckpointArgs,
    /// Sensor index for a per-sensor scatter of two channels.
    #[arg(long)]
    pub scatter: Option<usize>,
    /// Channel on the x axis; defaults to the first extra channel.
    #[arg(long)]
    pub scatter_x: Option<String>,
    /// Channel on the y axis; defaults to the metric.
    #[arg(long)]
    pub scatter_y: Option<String>,
    /// Two sensor indices, like 0,3, for a weekday/weekend association export.
    #[arg(long, value_delimiter = ',')]
    pub pair: Option<Vec<usize>>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged(_) | Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
