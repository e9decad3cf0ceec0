use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use eiphase::training::{Method, OptimizerKind, Regime, TrainConfig};
use eiphase::McVariant;

#[derive(Parser)]
#[command(name = "eiphase", version, about = "Self-supervised phase retrieval experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Dataset cache management.
    Dataset {
        #[command(subcommand)]
        action: DatasetCommand,
    },
    /// Train one reconstructor on a cached dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a cached split.
    Eval(EvalArgs),
    /// Train and evaluate every method over a list of sampling ratios.
    #[command(mut_arg("seed", |a| a.required(true)))]
    Sweep(SweepArgs),
    /// Per-image gradient-descent reconstruction of a cached split.
    Baseline(BaselineArgs),
    /// Write the CSV, plot and image grids for a report.
    Export(ExportArgs),
}

#[derive(Subcommand)]
pub enum DatasetCommand {
    /// Measure IDX images with a seeded operator and cache the result.
    Build(BuildArgs),
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
pub struct BuildArgs {
    /// IDX image file for the training split.
    #[arg(long, alias = "train-images")]
    pub train_images: PathBuf,
    /// IDX image file for the test split.
    #[arg(long, alias = "test-images")]
    pub test_images: Option<PathBuf>,
    /// Sampling ratio m/n.
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: u64,
    /// Cache root; the archive lands in `<out_dir>/<corpus>/op_m{m}_n{n}_s{seed}`.
    #[arg(long, alias = "out-dir", default_value = "data/cache")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "mnist")]
    pub corpus: String,
    /// Use only the leading images of each file.
    #[arg(long)]
    pub limit: Option<usize>,
}

/// Every [`TrainConfig`] key as an optional flag.
#[derive(Args, Clone, Default)]
#[command(rename_all = "snake_case")]
pub struct TrainOverrides {
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, alias = "learning-rate")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, alias = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long, alias = "dataset-fraction")]
    pub dataset_fraction: Option<f64>,
    #[arg(long, alias = "shifts-per-image")]
    pub shifts_per_image: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long, alias = "base-channels")]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub residual: Option<bool>,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s {
        "adam" => Ok(OptimizerKind::Adam),
        _ => Err(format!("unknown optimizer '{s}' (only adam is available)")),
    }
}

impl TrainOverrides {
    pub fn resolve(&self) -> eiphase::Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$f = v; })* };
        }
        set!(regime, alpha, lambda, learning_rate, epochs, batch_size, dataset_fraction, shifts_per_image, seed, optimizer, scales, base_channels, residual);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: TrainOverrides,
    /// Dataset archive built by `dataset build`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Run directory for the log, checkpoints and resolved config.
    #[arg(long, alias = "out-dir")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Label stored in the report.
    #[arg(long, default_value = "ss_amplitude")]
    pub method: Method,
    /// Phase-aligned reconstructions to keep for grids.
    #[arg(long, default_value_t = 8)]
    pub keep: usize,
    /// Report to create or extend.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
pub struct SweepArgs {
    #[command(flatten)]
    pub cfg: TrainOverrides,
    #[arg(long, alias = "train-images")]
    pub train_images: PathBuf,
    #[arg(long, alias = "test-images")]
    pub test_images: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "ss_amplitude,ss_intensity,supervised")]
    pub methods: Vec<Method>,
    /// Training images drawn from the corpus; overrides `dataset_fraction`.
    #[arg(long, alias = "train-count")]
    pub train_count: Option<usize>,
    #[arg(long, alias = "test-count")]
    pub test_count: Option<usize>,
    #[arg(long, alias = "keep-images", default_value_t = 8)]
    pub keep_images: usize,
    /// Test images solved per alpha by the gradient-descent method.
    #[arg(long, alias = "gd-images", default_value_t = 8)]
    pub gd_images: usize,
    /// Resumable run directory.
    #[arg(long, alias = "run-dir")]
    pub run_dir: PathBuf,
    /// Also export figures into this directory.
    #[arg(long, alias = "out-dir")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
pub struct BaselineArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Leading images to solve.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, alias = "step-size")]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub objective: Option<McVariant>,
    #[arg(long, default_value_t = 8)]
    pub keep: usize,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
pub struct ExportArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, alias = "out-dir")]
    pub out_dir: PathBuf,
}
