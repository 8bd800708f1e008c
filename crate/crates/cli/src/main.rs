//! `jdnet`: train, evaluate and run rain-streak removal networks.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "jdnet", version, about = "Single-image rain removal: training, evaluation and inference")]
struct Cli {
    /// Worker threads for kernels and data loading (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network on a paired dataset or on synthesized rain.
    Train(TrainArgs),
    /// Score a checkpoint on a paired dataset and write a CSV report.
    Eval(EvalArgs),
    /// Remove rain from images with a trained checkpoint.
    Derain(DerainArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Write rainy/clean training pairs.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Flat key = value config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of rainy/clean PNG pairs.
    #[arg(long, conflicts_with = "synth")]
    pub data_root: Option<PathBuf>,
    /// Train on procedurally synthesized pairs instead of files.
    #[arg(long)]
    pub synth: bool,
    /// Output directory for checkpoints and the metrics log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Pair naming as `RAINY:CLEAN` templates with an `{id}` placeholder.
    #[arg(long)]
    pub pair_pattern: Option<String>,
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Initial learning rate.
    #[arg(long = "lr")]
    pub base_lr: Option<f64>,
    /// Comma-separated epochs after which the rate drops (default 60% and 80% of --epochs).
    #[arg(long, value_delimiter = ',')]
    pub milestones: Option<Vec<u32>>,
    /// Rate multiplier at each milestone.
    #[arg(long)]
    pub lr_factor: Option<f64>,
    /// Training crop size in pixels.
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// neg_ssim, mae or mse.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of joint units.
    #[arg(long)]
    pub units: Option<usize>,
    /// Feature channels per unit.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Downsampling levels in scale aggregation.
    #[arg(long)]
    pub scales: Option<usize>,
    /// Pooling rate in self-calibrated convolution.
    #[arg(long)]
    pub pool_rate: Option<usize>,
    /// R1 (scale aggregation), R2 (+ self-calibrated conv) or R3 (+ attention).
    #[arg(long)]
    pub ablation: Option<String>,
    /// Comma-separated stage order inside a unit (scale_agg, sc_conv, attention).
    #[arg(long, value_delimiter = ',')]
    pub stage_order: Option<Vec<String>>,
    /// Attention footprint side length.
    #[arg(long)]
    pub footprint: Option<usize>,
    /// Channel reduction of the attention transforms.
    #[arg(long)]
    pub reduction: Option<usize>,
    /// Channels sharing one attention weight.
    #[arg(long)]
    pub share: Option<usize>,
    /// softmax or none.
    #[arg(long)]
    pub attention_normalize: Option<String>,
    /// Measure training-set quality every N epochs.
    #[arg(long)]
    pub eval_every: Option<u32>,
    /// Number of training pairs in the quality sample.
    #[arg(long)]
    pub eval_sample: Option<usize>,
    /// Keep a numbered checkpoint every N epochs (0: only the latest).
    #[arg(long)]
    pub checkpoint_every: Option<u32>,
    /// Number of synthesized pairs with --synth.
    #[arg(long)]
    pub synth_count: Option<usize>,
    /// Side length of synthesized images with --synth.
    #[arg(long)]
    pub synth_size: Option<usize>,
    #[command(flatten)]
    pub rain: RainArgs,
}

/// Rain model ranges, each `MIN..MAX` or a single value.
#[derive(Args, Debug, Default, Clone)]
pub struct RainArgs {
    /// Streaks per image.
    #[arg(long)]
    pub streaks: Option<String>,
    /// Streak angle in degrees from horizontal.
    #[arg(long)]
    pub angle: Option<String>,
    /// Streak length in pixels.
    #[arg(long)]
    pub length: Option<String>,
    /// Streak width in pixels.
    #[arg(long)]
    pub width: Option<String>,
    /// Added brightness at the streak centre.
    #[arg(long)]
    pub intensity: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long, required_unless_present = "baseline")]
    pub checkpoint: Option<PathBuf>,
    /// Score the rainy inputs themselves instead of a network's output.
    #[arg(long, conflicts_with = "checkpoint")]
    pub baseline: bool,
    /// Directory of rainy/clean PNG pairs.
    #[arg(long)]
    pub data_root: PathBuf,
    /// CSV report path.
    #[arg(long)]
    pub report: PathBuf,
    /// Pair naming as `RAINY:CLEAN` templates with an `{id}` placeholder.
    #[arg(long)]
    pub pair_pattern: Option<String>,
    /// Colour space for the metrics: rgb or luma.
    #[arg(long, default_value = "rgb")]
    pub colorspace: String,
}

#[derive(Args, Debug)]
pub struct DerainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input PNG files or directories of PNGs.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Output directory; files keep their input names.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the predicted rain layer, min-max normalised, as `<name>-streaks.png`.
    #[arg(long)]
    pub dump_streaks: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// all, ops, conv, attention, scaleagg, scconv, ssim or network.
    #[arg(long, default_value = "all")]
    pub module: String,
    /// Maximum relative error (default: 1e-4, and 1e-3 for the full network).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory of clean PNGs to add rain to.
    #[arg(long, required_unless_present = "procedural", conflicts_with = "procedural")]
    pub clean_dir: Option<PathBuf>,
    /// Generate this many procedural clean backgrounds instead.
    #[arg(long)]
    pub procedural: Option<usize>,
    /// Side length of procedural backgrounds.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pair naming as `RAINY:CLEAN` templates with an `{id}` placeholder.
    #[arg(long)]
    pub pair_pattern: Option<String>,
    #[command(flatten)]
    pub rain: RainArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Derain(a) => commands::derain(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
