use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod files;

/// Illuminant estimation pipeline: dataset analysis, patch extraction,
/// training, evaluation and augmentation.
#[derive(Parser)]
#[command(name = "cerberus", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chromaticity scatter, per-channel maxima histogram and saturation clusters.
    Analyze(AnalyzeArgs),
    /// Cut and downscale random patches into a tensor file.
    Patches(PatchesArgs),
    /// Train several networks and keep the one with the best validation median.
    Train(TrainArgs),
    /// Score an estimator on a manifest.
    ///
    /// Errors are reproduction angular errors in degrees against the dominant
    /// illuminant. For an even image count the median is the lower of the two
    /// middle values; no interpolation.
    Eval(EvalArgs),
    /// Write per-channel gain augmented copies of a dataset.
    Augment(AugmentArgs),
    /// Generate a synthetic clip-free dataset with known illuminants.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Image directory; defaults to the manifest's directory.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long, default_value = "dominant")]
    pub which: cerberus::analysis::Which,
    #[arg(long, default_value_t = 100.0)]
    pub bin_width: f64,
    #[arg(long, default_value_t = 64.0)]
    pub cluster_tol: f64,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum Mode {
    Train,
    Val,
}

#[derive(Args)]
pub struct PatchesArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Patches per image in train mode.
    #[arg(long, default_value_t = cerberus::patches::DEFAULT_PATCH_COUNT)]
    pub count: usize,
    #[arg(long, default_value_t = cerberus::patches::DEFAULT_ROI_X)]
    pub roi_x: usize,
    /// Source square sides for train mode; each must be a multiple of 64.
    #[arg(long, value_delimiter = ',', default_values_t = cerberus::patches::TRAIN_SIDES)]
    pub sides: Vec<usize>,
    #[arg(long, default_value_t = cerberus::patches::VALIDATION_SIDE)]
    pub val_side: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV of the selected run; defaults to history.csv next to --out.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub l2: f64,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.2)]
    pub drop_worst: f64,
    #[arg(long, default_value_t = 0.01)]
    pub drop_best: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value = "sgd")]
    pub optimizer: cerberus::train::Optimizer,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    /// grayworld, constant, or model:<checkpoint path>
    #[arg(long)]
    pub estimator: String,
    #[arg(long, default_value_t = 1)]
    pub k_patches: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = cerberus::patches::VALIDATION_SIDE)]
    pub patch_side: usize,
    #[arg(long, default_value_t = cerberus::patches::DEFAULT_ROI_X)]
    pub roi_x: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub per_image: usize,
    #[arg(long, default_value_t = 0.6)]
    pub gain_min: f64,
    #[arg(long, default_value_t = 1.6)]
    pub gain_max: f64,
    #[arg(long, default_value_t = 10.0)]
    pub max_shift_deg: f64,
    /// reject, clamp or skip
    #[arg(long, default_value = "skip")]
    pub sat_policy: cerberus::augment::SaturationPolicy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Patches(a) => commands::patches(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Augment(a) => commands::augment(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
