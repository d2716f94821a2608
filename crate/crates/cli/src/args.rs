use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "optswitch", version, about = "Optimal switching under jump-diffusions: simulate, train, evaluate")]
pub struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Simulate a path dataset.
    Simulate(SimulateArgs),
    /// Train the backward network solver.
    Train(TrainArgs),
    /// Run the learned strategy on fresh paths.
    Eval(EvalArgs),
    /// Compare the trained values with the regression baseline.
    Compare(CompareArgs),
    /// Runtime and accuracy over several state dimensions.
    Benchmark(BenchmarkArgs),
    /// Decision maps over two state coordinates.
    Heatmap(HeatmapArgs),
    /// Re-run the command recorded in an artifact manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Compare(_) => "compare",
            Command::Benchmark(_) => "benchmark",
            Command::Heatmap(_) => "heatmap",
            Command::Replay(_) => "replay",
        }
    }

    pub fn out(&self) -> &PathBuf {
        match self {
            Command::Simulate(a) => &a.out,
            Command::Train(a) => &a.out,
            Command::Eval(a) => &a.out,
            Command::Compare(a) => &a.out,
            Command::Benchmark(a) => &a.out,
            Command::Heatmap(a) => &a.out,
            Command::Replay(a) => &a.out,
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::Simulate(a) => a.out = out,
            Command::Train(a) => a.out = out,
            Command::Eval(a) => a.out = out,
            Command::Compare(a) => a.out = out,
            Command::Benchmark(a) => a.out = out,
            Command::Heatmap(a) => a.out = out,
            Command::Replay(a) => a.out = out,
        }
    }
}

/// Where the model configuration comes from.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Named preset (cl2d_lambda8, cl2d_lambda16, cl_hd_<d>, cl_forward, aid_capacity).
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Model configuration TOML file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 512)]
    pub minibatch: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of paths (default M²).
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also export the paths as CSV.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset directory written by `simulate`; otherwise paths are simulated.
    #[arg(long, conflicts_with_all = ["preset", "config", "paths"])]
    pub data: Option<PathBuf>,
    /// Number of paths to simulate (default M²).
    #[arg(long)]
    pub paths: Option<usize>,
    /// Seed for path simulation and for training.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Report training time including path simulation.
    #[arg(long)]
    pub end_to_end: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub solution: PathBuf,
    /// Number of evaluation paths (default: the training count).
    #[arg(long)]
    pub paths: Option<usize>,
    /// Seed of the evaluation paths (default: training seed + 1).
    #[arg(long)]
    pub eval_seed: Option<u64>,
    /// Evaluate on the training paths themselves.
    #[arg(long, conflicts_with_all = ["eval_seed", "paths"])]
    pub in_sample: bool,
    /// Starting mode, 1-based (default: every mode).
    #[arg(long)]
    pub mode: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub solution: PathBuf,
    /// Dataset for the regression baseline (default: the training paths).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchmarkArgs {
    /// State dimensions of the high-dimensional scheduling model.
    #[arg(long, value_delimiter = ',', default_value = "2,10,20,30")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 5000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Paths for the two-dimensional regression baseline.
    #[arg(long, default_value_t = 100_000)]
    pub baseline_paths: usize,
    /// Include path simulation in the measured time.
    #[arg(long)]
    pub end_to_end: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub solution: PathBuf,
    /// Time step of the decision.
    #[arg(long)]
    pub step: usize,
    /// Incumbent mode, 1-based (default: every mode).
    #[arg(long)]
    pub mode: Option<usize>,
    /// Two 1-based state coordinates.
    #[arg(long, value_delimiter = ',', required = true)]
    pub axes: Vec<usize>,
    /// Axis ranges as `lo:hi,lo:hi` (default: average · (1 ± width)).
    #[arg(long)]
    pub ranges: Option<String>,
    /// Relative half-width of the default ranges.
    #[arg(long, default_value_t = 0.5)]
    pub width: f64,
    /// Full state for the non-axis coordinates (default: training-path average at the step).
    #[arg(long, value_delimiter = ',')]
    pub fixed: Option<Vec<f64>>,
    /// Grid points per axis.
    #[arg(long, value_delimiter = ',', default_value = "25,25")]
    pub res: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// `manifest.toml` of an artifact directory.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
