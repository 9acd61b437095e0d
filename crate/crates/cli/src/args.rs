//! Flag definitions. Every field name doubles as a config-file key.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "smoothcert", version, about = "Train, certify and bound smoothed majority-vote MLP classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Smooth training with the correlation regularizer.
    Train(TrainArgs),
    /// Sharpness-based selection of the smoothing variance.
    Sigma(SigmaArgs),
    /// Certify per-sample ℓ2 radii and build the certified-accuracy curve.
    Certify(CertifyArgs),
    /// Evaluate the PAC-Bayes bound and the model-dependent radius.
    Bound(BoundArgs),
    /// Merge several result directories into one comparison.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Sigma(_) => "sigma",
            Command::Certify(_) => "certify",
            Command::Bound(_) => "bound",
            Command::Report(_) => "report",
        }
    }
}

/// Dataset selection shared by every subcommand that reads data.
#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// IDX image file (optionally gzip-compressed).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    /// IDX label file (optionally gzip-compressed).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Synthetic Gaussian blobs instead of IDX files: "classes,dims,count,spread,seed".
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<String>,
    /// Drop this many leading examples.
    #[arg(long, default_value_t = 0)]
    pub skip: usize,
    /// Keep at most this many examples after `skip`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub take: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Hidden-layer widths, comma separated ("" for a single linear layer).
    #[arg(long, default_value = "32,32,32")]
    pub hidden: String,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Learning-rate drops as "epoch:divisor" pairs, comma separated.
    #[arg(long, default_value = "10:10,20:10")]
    pub lr_drops: String,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Regularizer weight α.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Variance of the Gaussian training noise on inputs.
    #[arg(long, default_value_t = 0.12)]
    pub sigma2: f64,
    /// Seed for initialization, shuffling and noise (falls back to $SMOOTHCERT_SEED).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file of `key = value` lines; flags given on the command line win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SigmaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Model checkpoint (SMCERT01 container).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Largest acceptable mean accuracy drop.
    #[arg(long, default_value_t = 0.02)]
    pub tolerance: f64,
    /// Perturbed copies per grid point.
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    /// Training points used to measure accuracy.
    #[arg(long, default_value_t = 2048)]
    pub eval_subset: usize,
    /// Grid of variances: grid_max·i/grid_points for i = 1..=grid_points.
    #[arg(long, default_value_t = 1.0)]
    pub grid_max: f64,
    /// Number of grid values.
    #[arg(long, default_value_t = 100)]
    pub grid_points: usize,
    /// Keep scanning after the first rejection (trace only).
    #[arg(long)]
    pub full_scan: bool,
    /// Seed (falls back to $SMOOTHCERT_SEED).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file of `key = value` lines; flags given on the command line win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerArg {
    Projected,
    Materialized,
    Cached,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CertifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Model checkpoint (SMCERT01 container).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Smoothing variance for weights and inputs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    /// Read the smoothing variance from a `sigma` run's sigma.json.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_file: Option<PathBuf>,
    /// Separate input-noise variance (defaults to the smoothing variance).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_sigma2: Option<f64>,
    /// Selection draws.
    #[arg(long, default_value_t = 100)]
    pub n0: u64,
    /// Estimation draws.
    #[arg(long, default_value_t = 100_000)]
    pub n: u64,
    /// Failure probability of the confidence bound.
    #[arg(long, default_value_t = 0.001)]
    pub alpha_b: f64,
    /// Certify a seeded random subset of this many samples.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<usize>,
    /// Seed (falls back to $SMOOTHCERT_SEED).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores); results do not depend on it.
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    pub workers: usize,
    /// Weight-noise sampler.
    #[arg(long, value_enum, default_value_t = SamplerArg::Projected)]
    pub sampler: SamplerArg,
    /// Shared weight draws for `--sampler cached`.
    #[arg(long, default_value_t = 1000)]
    pub cache_size: usize,
    /// Largest radius on the curve (default: largest certified radius).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius_max: Option<f64>,
    /// Curve intervals between radius 0 and `radius_max`.
    #[arg(long, default_value_t = 100)]
    pub radius_steps: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file of `key = value` lines; flags given on the command line win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundArgs {
    /// Training data (determines m and B).
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Model checkpoint (SMCERT01 container).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Margin γ.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Confidence δ.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Use this empirical margin loss instead of estimating it.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin_loss: Option<f64>,
    /// Votes per sample when estimating the margin loss.
    #[arg(long, default_value_t = 100)]
    pub margin_votes: u64,
    /// Input-noise variance for the margin loss (default: Ψ).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin_sigma2: Option<f64>,
    /// Top-class probability for the radius.
    #[arg(long, requires = "pb")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pa: Option<f64>,
    /// Runner-up probability for the radius.
    #[arg(long, requires = "pa")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pb: Option<f64>,
    /// Seed (falls back to $SMOOTHCERT_SEED).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file of `key = value` lines; flags given on the command line win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Result directories (train and/or certify outputs).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Display names, comma separated (default: directory names).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub names: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file of `key = value` lines; flags given on the command line win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
