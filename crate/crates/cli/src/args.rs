use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "radnet",
    version,
    about = "Chest X-ray classification: split, train, evaluate, explain"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a labelled image directory and write a stratified split manifest.
    Split(SplitArgs),
    /// Train a model on the train split of a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and write ROC and confusion CSVs.
    Eval(EvalArgs),
    /// Render a Grad-CAM overlay for one image.
    Explain(ExplainArgs),
    /// Compare analytic and finite-difference gradients of every operation.
    Gradcheck(GradcheckArgs),
    /// Run the oracle suites.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Root directory holding NORMAL/ and PNEUMONIA/ subdirectories.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train, validation and test fractions, comma separated.
    #[arg(long, default_value = "0.88,0.08,0.04", value_parser = parse_ratios)]
    pub ratios: [f64; 3],
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Baseline,
    Densenet121,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerChoice {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelChoice,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Defaults to 1e-3 for baseline and 1e-4 for densenet121.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OptimizerChoice::Adam)]
    pub optimizer: OptimizerChoice,
    /// Momentum for SGD.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Input channels (1 or 3); defaults to 1 for baseline, 3 for densenet121.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Square input side; defaults to 32 for baseline, 224 for densenet121.
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Maximum photometric perturbation per factor.
    #[arg(long, default_value_t = 0.05)]
    pub augment_delta: f64,
    #[arg(long)]
    pub no_augment: bool,
    /// Augment each sample once before training instead of every epoch.
    #[arg(long, conflicts_with = "no_augment")]
    pub augment_once: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub metrics: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    #[arg(long)]
    pub roc: Option<PathBuf>,
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Directory receiving every misclassified input as a PNG.
    #[arg(long)]
    pub dump_misclassified: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "UPPER")]
pub enum ClassChoice {
    Normal,
    Pneumonia,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_enum)]
    pub class: ClassChoice,
    /// Tapped layer; defaults to the last convolutional feature map.
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    pub alpha: f32,
    /// Also write the upsampled grayscale heatmap.
    #[arg(long)]
    pub heatmap_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Sabotage one check to exercise failure reporting.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 3 comma-separated fractions, got {}", v.len()))
}
