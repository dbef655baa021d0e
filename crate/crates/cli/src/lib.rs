//! Operator entry points: calibrate, eval, serve, synth and report.

pub mod commands;
pub mod settings;

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use fimroute::confidence::ConfidenceMetric;
use fimroute::model::Language;
use fimroute::routers::Policy;

use crate::settings::RouterOverrides;

#[derive(Debug, Parser)]
#[command(name = "fimroute", version, about = "Local-first code-completion routing")]
pub struct Cli {
    /// TOML file shared with the gateway; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Choose thresholds or fit a trained router on a calibration subset.
    Calibrate(CalibrateArgs),
    /// Evaluate routing strategies on the test split.
    Eval(EvalArgs),
    /// Run the HTTP gateway.
    Serve(ServeArgs),
    /// Write a seeded synthetic dataset with two models' predictions.
    Synth(SynthArgs),
    /// Render saved report files as text tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Task dataset (JSONL).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Prediction records for both models (JSONL).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub local_model: Option<String>,
    #[arg(long)]
    pub remote_model: Option<String>,
    /// Calibration subset size; the remaining tasks form the test split.
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed of the calibration split.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RouterArgs {
    #[arg(long)]
    pub policy: Option<Policy>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub metric: Option<ConfidenceMetric>,
}

impl RouterArgs {
    pub fn overrides(&self) -> RouterOverrides {
        RouterOverrides {
            policy: self.policy,
            threshold: self.threshold,
            metric: self.metric,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub router: RouterArgs,
    /// Run a robustness sweep with this many seeds per size.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Calibration sizes for the sweep.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    /// Pick the largest threshold among equally good ones.
    #[arg(long)]
    pub prefer_largest: bool,
    /// Warn instead of failing below the minimum calibration size.
    #[arg(long)]
    pub allow_small: bool,
    /// Output file: the calibration artifact, or the sweep report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated policies; defaults to all of them.
    #[arg(long, alias = "strategy", value_delimiter = ',')]
    pub strategies: Vec<Policy>,
    /// Fixed threshold for threshold policies instead of calibrating.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub metric: Option<ConfidenceMetric>,
    /// Calibration artifact applied to the strategy it was produced for.
    #[arg(long)]
    pub calibration: Vec<PathBuf>,
    /// Judge by running the unit tests instead of recorded outcomes.
    #[arg(long)]
    pub execute: bool,
    /// Also print pass@1 and local rate per threshold for each method.
    #[arg(long)]
    pub sweep: bool,
    /// Write the reports as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub router: RouterArgs,
    #[arg(long)]
    pub listen: Option<std::net::SocketAddr>,
    /// Calibration artifact; its policy must match the router's.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// TOML file with a full generator configuration.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub language: Option<Language>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Eval, sweep or calibration JSON files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

/// Runs one subcommand, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let file = settings::FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Calibrate(args) => commands::calibrate(&file, &args, out),
        Command::Eval(args) => commands::eval(&file, &args, out),
        Command::Serve(args) => commands::serve(&file, &args),
        Command::Synth(args) => commands::synth(&args, out),
        Command::Report(args) => commands::report(&args, out),
    }?;
    out.flush()?;
    Ok(())
}
