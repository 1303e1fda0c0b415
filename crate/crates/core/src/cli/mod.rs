//! The `gsgn` command-line interface.
//!
//! Every command writes a [`RunManifest`] next to its outputs; `gsgn replay`
//! re-runs a manifest and checks that the outputs come out byte-identical.

mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::error::Error;
use crate::eval::AttackKind;

pub use commands::{replay, run, tree_digest};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "gsgn", version, about = "Train a small traffic-sign CNN and measure its robustness to FGSM and PGD attacks.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier and write a checkpoint.
    Train(TrainArgs),
    /// Sweep an attack over a list of budgets and write an accuracy CSV.
    Evaluate(EvaluateArgs),
    /// Attack a single image and write the adversarial image and perturbation.
    Attack(AttackArgs),
    /// Render a grid of adversarial images and perturbations across budgets.
    Visualize(VisualizeArgs),
    /// Write a synthetic sign dataset as one directory of PPM files per class.
    SynthData(SynthDataArgs),
    /// Re-run the command recorded in a manifest and verify its outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset root with one subdirectory of images per class.
    #[arg(long, value_name = "DIR", conflicts_with = "synth")]
    pub data: Option<PathBuf>,
    /// Use the synthetic sign generator. Optional KEY=VALUE tokens:
    /// classes (default 4), per-class (default 200), seed (default --seed).
    #[arg(long, value_name = "KEY=VALUE", num_args = 0..)]
    pub synth: Option<Vec<String>>,
    /// Fraction of each class used for training; the rest is the test split.
    /// 1 disables splitting.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
}

#[derive(Debug, Clone, Args)]
pub struct AttackParams {
    /// Attack to run: fgsm or pgd.
    #[arg(long, default_value = "fgsm", value_parser = parse_attack)]
    pub attack: AttackKind,
    /// PGD iterations.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// PGD step size in normalized [-1, 1] units.
    #[arg(long, default_value_t = 0.02)]
    pub alpha: f64,
    /// Start PGD from a uniform sample of the epsilon ball (true or false).
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub random_start: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArg {
    /// Checkpoint to load.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Refuse to run unless the checkpoint's SHA-256 equals this value.
    #[arg(long, value_name = "HEX")]
    pub model_digest: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Input side length in pixels; images are resized to side x side.
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    /// Expected number of classes (for --synth, the number to generate).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Width of the hidden dense layer.
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    /// Seed for data generation, splitting, initialization and shuffling.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Checkpoint path.
    #[arg(long, value_name = "PATH", default_value = "model.gsgn")]
    pub out: PathBuf,
    /// Per-epoch CSV log [default: <out>.log.csv].
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    /// Run manifest [default: <out>.manifest].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub attack: AttackParams,
    /// Comma-separated budgets in normalized units; must contain 0
    /// [default: fgsm 0,0.1,0.2,0.3,0.4,0.5,0.6; pgd 0,0.05,0.1,0.15,0.2,0.3].
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub eps: Option<Vec<f64>>,
    /// Seed for synthetic data, the split and attack randomness.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Accuracy CSV.
    #[arg(long, value_name = "PATH", default_value = "report.csv")]
    pub out: PathBuf,
    /// Run manifest [default: <out>.manifest].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ImageSource {
    /// Image file to attack (PPM, PNG, JPEG or BMP); resized to the model's input.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["data", "synth"])]
    pub image: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Index into the test split (or the whole dataset with --split 1).
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// True label [default: the dataset label, or the model's prediction for --image].
    #[arg(long)]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub source: ImageSource,
    #[command(flatten)]
    pub attack: AttackParams,
    /// Budget in normalized units.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Adversarial image (PPM).
    #[arg(long, value_name = "PATH", default_value = "adv.ppm")]
    pub out_adv: PathBuf,
    /// Perturbation image (PPM), mapped from [-eps, eps] to [0, 1].
    #[arg(long, value_name = "PATH", default_value = "perturbation.ppm")]
    pub out_perturbation: PathBuf,
    /// Run manifest [default: <out-adv>.manifest].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VisualizeArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub source: ImageSource,
    #[command(flatten)]
    pub attack: AttackParams,
    /// Comma-separated budgets, one grid column each
    /// [default: fgsm 0,0.1,0.2,0.3,0.4,0.5,0.6; pgd 0,0.05,0.1,0.15,0.2,0.3].
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub eps: Option<Vec<f64>>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Grid image (PPM): adversarial images on top, perturbations below.
    #[arg(long, value_name = "PATH", default_value = "grid.ppm")]
    pub out: PathBuf,
    /// Run manifest [default: <out>.manifest].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthDataArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory; receives <class>/img_NNNN.ppm.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Run manifest [default: <out>.manifest].
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Write outputs into this directory (same file names) instead of the
    /// recorded paths.
    #[arg(long, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
}

fn parse_attack(s: &str) -> std::result::Result<AttackKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 1 on runtime failure, 2 on usage
/// errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}
