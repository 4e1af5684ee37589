mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Wasserstein distances, generalised Wasserstein Dice evaluation, synthetic
/// data and a small holistic segmentation network.
#[derive(Debug, Parser)]
#[command(name = "wdice", version)]
struct Cli {
    /// Worker threads for data-parallel loops (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Wasserstein distance between two label distributions.
    Emd(EmdArgs),
    /// Score a prediction against ground truth and write a report.
    Eval(EvalArgs),
    /// Generate a synthetic nested-tumour dataset.
    GenData(GenDataArgs),
    /// Train the holistic network from a TOML or JSON config.
    Train(TrainArgs),
    /// Write fused probability maps of a trained model for a dataset.
    Predict(PredictArgs),
    /// Side-by-side comparison of report sets.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct EmdArgs {
    /// First distribution: a comma-separated list or a file containing one.
    #[arg(long)]
    p: String,
    /// Second distribution, same forms as `--p`.
    #[arg(long)]
    q: String,
    /// `tree`, `zero-one`, or a metric file.
    #[arg(long, default_value = "tree")]
    metric: String,
    /// Also print the optimal transport plan.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Probability map or sample file; or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Sample file holding the ground truth; or a dataset directory.
    #[arg(long)]
    gt: PathBuf,
    /// `NAME=SPEC` where SPEC is `tree`, `zero-one` or a metric file.
    /// Repeatable. Defaults to `zero_one` and, for five labels, `tree`.
    #[arg(long = "metric")]
    metrics: Vec<String>,
    /// Region list file (`name: label, label, ...` per line).
    #[arg(long)]
    regions: Option<PathBuf>,
    /// Report file; a directory when evaluating directories.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record the evaluation time in the report.
    #[arg(long)]
    timestamp: bool,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    #[arg(long, default_value_t = 2)]
    modalities: usize,
    /// Area fractions of labels 1 to 4, comma-separated.
    #[arg(long, default_value = "0.02,0.10,0.03,0.01")]
    fractions: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config (`.toml` or `.json`).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the network seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for probability maps (same file names).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `NAME=PATH`, where PATH is a report file or a directory of reports.
    /// Columns follow the argument order.
    #[arg(required = true)]
    sets: Vec<String>,
    /// Metric weighting the confusion mass: `tree`, `zero-one` or a file.
    #[arg(long, default_value = "tree")]
    mass_metric: String,
    /// Also write the comparison as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Divergence(String),
}

impl From<wdice::Error> for CliError {
    fn from(e: wdice::Error) -> Self {
        match e {
            wdice::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl CliError {
    pub fn input(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{context}: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Emd(a) => commands::emd(a),
        Command::Eval(a) => commands::eval(a),
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Divergence(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
