//! `ptree`: dataset generation, training, baselines, evaluation and plots for
//! posterior trees on Gaussian-mixture denoising tasks.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ptree", version, about = "Posterior trees on Gaussian-mixture denoising tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample (x, y = x + noise) pairs from a prior and write a dataset file.
    GenData(GenDataArgs),
    /// Train a posterior-tree model; writes a checkpoint and a per-epoch history.
    Train(TrainArgs),
    /// Build the hierarchical K-means baseline tree from posterior samples or points.
    Baseline(BaselineArgs),
    /// Compare a trained model against the analytic posterior and baseline trees.
    Eval(EvalArgs),
    /// Draw a tree over posterior samples as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
pub struct TaskArgs {
    /// `rhombus` or a JSON Gaussian-mixture file.
    #[arg(long = "task", alias = "prior", default_value = "rhombus")]
    pub task: String,
    /// Noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long, env = "POSTREE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long)]
    pub out_history: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long, env = "POSTREE_SEED")]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Measurement whose posterior is sampled, e.g. `--y=-2.5,2.5`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub y: Option<Vec<f64>>,
    /// Cluster the clean points of this dataset instead of posterior samples.
    #[arg(long, conflicts_with = "y")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub n_samples: usize,
    #[arg(long = "K", short = 'K')]
    pub k: usize,
    #[arg(long = "d", short = 'd')]
    pub d: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, env = "POSTREE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_tree: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub task: TaskArgs,
    /// Test measurements: a dataset file (its y columns) or plain comma-separated rows.
    #[arg(long)]
    pub test_ys: Option<PathBuf>,
    /// Number of test measurements drawn from the marginal when `--test-ys` is absent.
    #[arg(long, default_value_t = 20)]
    pub n_test: usize,
    #[arg(long, default_value_t = 10_000)]
    pub oracle_samples: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Expected tree degree; must match the model.
    #[arg(long = "K", short = 'K')]
    pub k: Option<usize>,
    /// Expected tree depth; must match the model.
    #[arg(long = "d", short = 'd')]
    pub d: Option<usize>,
    #[arg(long, env = "POSTREE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_report: PathBuf,
}

#[derive(Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub y: Vec<f64>,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, env = "POSTREE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_svg: PathBuf,
}

/// Bad input (exit 2) or a numerical fault (exit 3).
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Numerical(String),
}

impl From<ptree_core::Error> for Failure {
    fn from(e: ptree_core::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

pub fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
}

pub fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Eval(a) => commands::eval(a),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
