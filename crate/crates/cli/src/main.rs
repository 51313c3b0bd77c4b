//! `mstta`: generate synthetic embedding streams, run test-time adaptation
//! over them and sweep its hyperparameters.
//!
//! Exit codes: 0 success, 2 bad flags or configuration, 3 I/O failure,
//! 4 invalid dataset or cache dump.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mstta_core::meanshift::NeighborSource;
use mstta_core::pipeline::{Mode, SweepAxis};
use mstta_core::report::ReportFormat;

#[derive(Debug, Parser)]
#[command(name = "mstta", version, about = "Training-free test-time adaptation over embedding streams")]
struct Cli {
    /// TOML or JSON file with default values; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset directory.
    Synth(SynthArgs),
    /// Stream a dataset once and report accuracy.
    Run(RunArgs),
    /// Evaluate one hyperparameter over a list of values.
    Sweep(SweepArgs),
    /// Summarize a dataset directory or a cache dump.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    /// Concentration of test features around their class direction.
    #[arg(long)]
    kappa_test: Option<f64>,
    /// Concentration of text anchors around their rotated class direction.
    #[arg(long)]
    kappa_text: Option<f64>,
    /// Angle in radians between each class direction and its text anchor.
    #[arg(long)]
    shift_angle: Option<f64>,
    /// Fraction of labels replaced by a uniformly drawn other class.
    #[arg(long)]
    label_noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Hyperparameters shared by `run` and `sweep`. Unset values fall back to the
/// config file, then to the built-in defaults.
#[derive(Debug, Args)]
struct ModelArgs {
    /// clip, baseline or ms-tta [default: ms-tta]
    #[arg(long)]
    mode: Option<Mode>,
    /// Mean-shift step size in [0, 1] [default: 0.8]
    #[arg(long)]
    alpha: Option<f64>,
    /// Neighbors per mean-shift step [default: 3]
    #[arg(long)]
    k: Option<usize>,
    /// Cache entries kept per class; 0 disables the cache [default: 3]
    #[arg(long)]
    q: Option<usize>,
    /// Weight of the cache logits [default: 1.0]
    #[arg(long)]
    lambda: Option<f64>,
    /// Softmax scale used for entropy [default: 100]
    #[arg(long)]
    scale: Option<f64>,
    /// bank_raw or cache_refined [default: bank_raw]
    #[arg(long)]
    neighbor_source: Option<NeighborSource>,
    /// Reject cache candidates with higher entropy (nats).
    #[arg(long)]
    entropy_threshold: Option<f64>,
    /// Keep only the most recent N features for neighbor search.
    #[arg(long)]
    bank_capacity: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Write the report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// json or csv [default: json]
    #[arg(long)]
    format: Option<ReportFormat>,
    /// Write one JSON line per sample with its prediction and final logits.
    #[arg(long, value_name = "PATH")]
    predictions: Option<PathBuf>,
    /// Write the final cache state as JSON.
    #[arg(long, value_name = "PATH")]
    cache_dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// alpha, k, q or lambda
    #[arg(long)]
    axis: Option<SweepAxis>,
    /// Comma-separated values, e.g. 0,0.2,0.4
    #[arg(long, allow_hyphen_values = true)]
    values: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
    /// csv or json [default: csv]
    #[arg(long)]
    format: Option<ReportFormat>,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_name = "PATH", conflicts_with = "data")]
    cache_dump: Option<PathBuf>,
    /// Print JSON instead of key=value lines.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
