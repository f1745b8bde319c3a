use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "v2s", version, about = "Reprogram a frozen time-series classifier for new tasks")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Master seed; every component derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Flat key=value file; keys are flag names, explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic datasets in UCR format.
    GenData(GenData),
    /// Train and freeze a source classifier.
    TrainSource(TrainSource),
    /// Learn θ and the label mapping for a target task.
    Reprogram(Reprogram),
    /// Fine-tune a copy of the source model with a new dense head.
    Baseline(Baseline),
    /// Risk-bound report and SWD trace for trained θ.
    Diagnose(Diagnose),
    /// Export source logits of a dataset as CSV.
    DumpLogits(DumpLogits),
}

#[derive(Debug, Args)]
pub struct DataOpts {
    /// Field delimiter of UCR files.
    #[arg(long, default_value_t = '\t')]
    pub delimiter: char,
    /// Normalization applied after loading: none or per-series-z.
    #[arg(long, default_value = "none")]
    pub norm: String,
}

#[derive(Debug, Args)]
pub struct GenData {
    /// source|sinusoid, target|bumps, or bursts.
    #[arg(long, default_value = "source")]
    pub kind: String,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 512)]
    pub len: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Also write a test split with this many samples per class.
    #[arg(long)]
    pub test_n: Option<usize>,
    /// File stem; defaults to the kind.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainSource {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub io: DataOpts,
    /// Width multiplier of the convolutional frontend.
    #[arg(long, default_value_t = 1)]
    pub width: usize,
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Fraction held out for the source-risk estimate.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
}

#[derive(Debug, Args)]
pub struct Reprogram {
    /// Frozen source model (.v2sm).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    /// Test split; the training set is used for monitoring when absent.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub io: DataOpts,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.04)]
    pub weight_decay: f64,
    /// Comma-separated dropout rates.
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4")]
    pub dropout_grid: String,
    /// Comma-separated replica counts; `a-b` ranges allowed.
    #[arg(long, default_value = "1-10")]
    pub m_grid: String,
    /// Cross-validation folds; 0 or 1 fits the first feasible cell directly.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Source data; enables per-epoch SWD tracking.
    #[arg(long)]
    pub source_data: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub swd_projections: usize,
    #[arg(long, default_value_t = 256)]
    pub swd_points: usize,
}

#[derive(Debug, Args)]
pub struct Baseline {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub io: DataOpts,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Exact,
    Swd,
}

#[derive(Debug, Args)]
pub struct Diagnose {
    /// Source model; repeat together with --theta to compare models.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    /// θ checkpoint for each --model, in the same order.
    #[arg(long, required = true)]
    pub theta: Vec<PathBuf>,
    #[arg(long)]
    pub source_data: PathBuf,
    #[arg(long)]
    pub target_data: PathBuf,
    #[command(flatten)]
    pub io: DataOpts,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Exact)]
    pub estimator: EstimatorArg,
    /// Points per cloud for the alignment term.
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 0.05)]
    pub slack: f64,
    #[arg(long, default_value_t = 1000)]
    pub projections: usize,
    /// source_risk.json of the first model; otherwise ε_S is measured on --source-data.
    #[arg(long)]
    pub risk: Option<PathBuf>,
    /// history.csv whose SWD column is copied into the trace.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpLogits {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// θ checkpoint; writes logits before (θ = 0) and after reprogramming.
    #[arg(long)]
    pub theta: Option<PathBuf>,
    #[command(flatten)]
    pub io: DataOpts,
}

const SUBCOMMANDS: [&str; 6] = ["gen-data", "train-source", "reprogram", "baseline", "diagnose", "dump-logits"];

/// Value of `--config` in a raw argument list.
pub fn config_path(args: &[String]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Inserts `--key value` pairs right after the subcommand so that flags
/// given on the command line (which come later) override them.
pub fn splice_config(args: &[String], pairs: &[(String, String)]) -> Vec<String> {
    let tokens = pairs
        .iter()
        .flat_map(|(k, v)| [format!("--{}", k.replace('_', "-")), v.clone()]);
    match args.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) {
        Some(i) => args[..=i].iter().cloned().chain(tokens).chain(args[i + 1..].iter().cloned()).collect(),
        None => args.to_vec(),
    }
}
