//! `rln` — command-line driver for the nerve-localization pipeline.
//!
//! Stages: `synth` generates a phantom cohort, `build-atlas` / `bsa` run the
//! shape-alignment stage, `train-seg` / `train-refine` fit the two networks,
//! `locate` localizes one record, `eval` runs the full pipeline on the test
//! split, and `ablation` compares the refinement modes. Every stage derives
//! its randomness from the global `--seed`, so any run is reproducible from
//! the command line alone.

mod commands;
mod settings;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use settings::{Ctx, PipelineOpts};

#[derive(Parser, Debug)]
#[command(name = "rln", version, about = "Localize the recurrent laryngeal nerve in 2D scans")]
struct Cli {
    /// Master seed; stage seeds are derived from it by name (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Plain-text config file: one `key = value` per line, `#` comments.
    /// Command-line flags override file entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory artifacts are written to (default `out`, config: out_dir).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of records (config: synth.count, default 220).
    #[arg(long)]
    pub count: Option<usize>,
    /// Relative split weights (config: synth.train/val/test, default 150/20/50).
    #[arg(long)]
    pub train: Option<f64>,
    #[arg(long)]
    pub val: Option<f64>,
    #[arg(long)]
    pub test: Option<f64>,
    /// Image size (config: synth.width/height, default 256x256).
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Nerve-look-alike distractor dots per image (config: synth.distractors).
    #[arg(long)]
    pub distractors: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BuildAtlasArgs {
    /// Dataset directory (manifest.csv, images/, masks/).
    #[arg(long)]
    pub dataset_dir: PathBuf,
    /// left or right; omitted = both.
    #[arg(long)]
    pub side: Option<String>,
}

#[derive(Args, Debug)]
pub struct BsaArgs {
    #[command(flatten)]
    pub pipeline: PipelineOpts,
}

#[derive(Args, Debug)]
pub struct TrainSegArgs {
    /// Dataset directory; training uses the train split.
    #[arg(long)]
    pub dataset_dir: PathBuf,
    /// Epochs (config: seg.epochs, default 20).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size (config: seg.batch, default 16).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Learning rate (config: seg.lr, default 3e-4).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Per-epoch learning-rate decay (config: seg.decay, default 0.9).
    #[arg(long)]
    pub decay: Option<f64>,
    /// Encoder channels, five comma-separated values (config: seg.channels).
    #[arg(long)]
    pub channels: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainRefineArgs {
    /// Dataset directory; training uses the train split.
    #[arg(long)]
    pub dataset_dir: PathBuf,
    /// Which paths the refiner uses: dual, local, or global.
    #[arg(long, default_value = "dual")]
    pub mode: String,
    /// Epochs (config: refine.epochs, default 60).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size (config: refine.batch, default 16).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Learning rate (config: refine.lr, default 1e-3).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training-candidate jitter disk radius, px (config: refine.jitter, default 10).
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Sum the regression loss per coordinate instead of over the joint
    /// offset norm (config: refine.per_coordinate).
    #[arg(long)]
    pub per_coordinate: bool,
    /// Block channels, comma-separated (config: refine.channels, default 32,64,128).
    #[arg(long)]
    pub channels: Option<String>,
    /// Adaptive pooling grid side (config: refine.pool_grid, default 4).
    #[arg(long)]
    pub pool_grid: Option<usize>,
}

#[derive(Args, Debug)]
pub struct LocateArgs {
    #[command(flatten)]
    pub pipeline: PipelineOpts,
    /// Record id to localize.
    #[arg(long)]
    pub id: String,
    /// Refinement checkpoint; omitted = stop at the alignment candidate.
    #[arg(long)]
    pub refine: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub pipeline: PipelineOpts,
    /// Refinement checkpoint; omitted = evaluate the alignment stage only.
    #[arg(long)]
    pub refine: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblationArgs {
    #[command(flatten)]
    pub pipeline: PipelineOpts,
    /// Checkpoint trained with --mode local.
    #[arg(long)]
    pub local: PathBuf,
    /// Checkpoint trained with --mode global.
    #[arg(long)]
    pub global: PathBuf,
    /// Checkpoint trained with --mode dual.
    #[arg(long)]
    pub dual: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom cohort into the output directory.
    Synth(SynthArgs),
    /// Load the training-split atlas and export its landmark table.
    BuildAtlas(BuildAtlasArgs),
    /// Run segmentation + shape alignment on the test split, writing candidates.csv.
    Bsa(BsaArgs),
    /// Train the segmentation network on the train split.
    TrainSeg(TrainSegArgs),
    /// Train the patch-regression refiner on the train split.
    TrainRefine(TrainRefineArgs),
    /// Localize a single record end to end.
    Locate(LocateArgs),
    /// Run the full pipeline on the test split and report metrics.
    Eval(EvalArgs),
    /// Compare initialization against local / global / dual refinement.
    Ablation(AblationArgs),
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let ctx = Ctx::new(cli.seed, cli.config, cli.out_dir)?;
    match &cli.command {
        Command::Synth(args) => commands::run_synth(&ctx, args),
        Command::BuildAtlas(args) => commands::run_build_atlas(&ctx, args),
        Command::Bsa(args) => commands::run_bsa(&ctx, args),
        Command::TrainSeg(args) => commands::run_train_seg(&ctx, args),
        Command::TrainRefine(args) => commands::run_train_refine(&ctx, args),
        Command::Locate(args) => commands::run_locate(&ctx, args),
        Command::Eval(args) => commands::run_eval(&ctx, args),
        Command::Ablation(args) => commands::run_ablation(&ctx, args),
    }
}
