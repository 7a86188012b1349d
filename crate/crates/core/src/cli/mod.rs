//! Command-line interface: `simulate`, `fit`, `infer` and `plotdata`.

mod commands;
pub mod config;
pub mod io;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{fit_dataset, read_replications, DatasetFit, EstimatorFitSummary, FitReport};
pub use manifest::{Artifact, RunManifest};

use crate::error::Result;

/// Environment variable that overrides the worker thread count.
pub const THREADS_ENV: &str = "FUNRIDGE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "funridge",
    version,
    about = "Partition-based functional ridge regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Monte Carlo study and write report tables.
    Simulate(SimulateArgs),
    /// Fit estimators to long-format CSV data.
    Fit(FitArgs),
    /// Confidence intervals for a linear functional of the fitted coefficients.
    Infer(InferArgs),
    /// Tidy CSVs for plotting from the outputs of `simulate` or `fit`.
    Plotdata(PlotdataArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated estimator names, e.g. FRE,FRFM.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Functional data: subject_id, predictor_id, grid_point, value.
    #[arg(long)]
    pub data: PathBuf,
    /// Responses: subject_id, y.
    #[arg(long)]
    pub response: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Functions x_j: predictor_id, grid_point, value.
    #[arg(long)]
    pub x: PathBuf,
    /// Confidence level (default 0.95).
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PlotdataArgs {
    /// Directory holding report.json and/or gcv_trace.csv.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "plots")]
    pub out: PathBuf,
}

/// Run a parsed command and return the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Plotdata(a) => commands::plotdata(&a),
    }
}
