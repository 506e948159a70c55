use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "propall",
    version,
    about = "Probabilistic partial label learning experiments",
    args_override_self = true
)]
pub struct Cli {
    /// Flat `key = value` file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add distractor labels to a labeled dataset and write PLL-CSV.
    Corrupt(CorruptArgs),
    /// Train an MLP with the partial-label cost.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Run the oracle suites against the loss kernels.
    Gradcheck(GradcheckArgs),
    /// Train with and without logit noise over several seeds.
    Ablate(AblateArgs),
}

/// A dataset given either as PLL-CSV or as an IDX images/labels pair.
#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// PLL-CSV file (optionally gzip-compressed).
    #[arg(long, value_name = "FILE", conflicts_with_all = ["idx_images", "idx_labels"])]
    pub data: Option<PathBuf>,
    /// IDX image tensor; pixels are scaled to [0, 1].
    #[arg(long, value_name = "FILE", requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    /// Class count for IDX input.
    #[arg(long, default_value_t = 10)]
    pub num_classes: usize,
    /// Keep only the first N rows.
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
}

/// Optional held-out set for training-time evaluation.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TestInputArgs {
    #[arg(long, value_name = "FILE", conflicts_with_all = ["test_idx_images", "test_idx_labels"])]
    pub test: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "test_idx_labels")]
    pub test_idx_images: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "test_idx_images")]
    pub test_idx_labels: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptMode {
    Fixed,
    Bernoulli,
    Instance,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct CorruptArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum)]
    pub mode: CorruptMode,
    /// Distractors per row (fixed mode).
    #[arg(long)]
    pub extra: Option<usize>,
    /// Per-label inclusion probability (bernoulli mode).
    #[arg(long)]
    pub q: Option<f64>,
    /// Comma-separated n×k score matrix, one row per line (instance mode).
    #[arg(long, value_name = "FILE")]
    pub scores: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PLL-CSV path; a `.gz` suffix compresses it.
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainingArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub test: TestInputArgs,
    /// Comma-separated layer widths, input first, classes last.
    #[arg(long, default_value = "784,300,301,302,303,10")]
    pub arch: String,
    /// Batch normalization before each hidden ReLU.
    #[arg(long)]
    pub bn: bool,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub wd: f64,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Logit noise; `off` sets the peak scale to 0.
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub noise: Switch,
    #[arg(long, default_value_t = 1.0)]
    pub peak_lambda: f64,
    /// Fraction of training at the peak noise scale.
    #[arg(long, default_value_t = 0.8)]
    pub plateau: f64,
    /// Record metrics every N iterations; 0 means once per epoch.
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,
    /// Also record accuracy on the training data.
    #[arg(long)]
    pub eval_train: bool,
    /// Threads for eval-mode inference only.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Output directory; defaults to $PROPALL_OUT_DIR, then `.`.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct AblateArgs {
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Seeds shared by both arms.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this file.
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct GradcheckArgs {
    /// Largest class count in the event-sum suite.
    #[arg(long, default_value_t = 12)]
    pub k: usize,
    /// Random cases per class count in the event-sum suite.
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    /// Random cases per finite-difference suite.
    #[arg(long, default_value_t = 1000)]
    pub fd_cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Check the unguarded cost instead of the stable one (must fail).
    #[arg(long)]
    pub negative_control: bool,
    #[arg(long)]
    pub json: bool,
}
