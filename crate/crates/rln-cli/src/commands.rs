//! Subcommand implementations.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rln_core::bsa::{build_atlas, infer_candidate, CANDIDATES_HEADER};
use rln_core::eval::{render_overlay, EvalReport};
use rln_core::imaging::{read_gray_pgm, read_mask_pgm, write_gray_pgm, GrayImage, LabelMask, Point2};
use rln_core::locate_net::{
    refine, train_locate_net, LocateNet, LocateNetConfig, PathMode, RefineTrainConfig,
};
use rln_core::nnkit::SmoothL1Form;
use rln_core::pipeline::{
    ablation, candidates_to_csv, collect_candidates, run_pipeline, AblationCheckpoints,
};
use rln_core::seg_provider::{
    train_toy_unet, SegTrainConfig, SegmentationProvider, ToyUNetConfig,
};
use rln_core::synth::{
    generate_cohort_with, image_path, manifest_path, mask_path, read_manifest, PhantomParams,
    Side, Split,
};

use crate::settings::{Ctx, SEED_SYNTH, SEED_TRAIN_REFINE, SEED_TRAIN_SEG};
use crate::{
    AblationArgs, BsaArgs, BuildAtlasArgs, EvalArgs, LocateArgs, SynthArgs, TrainRefineArgs,
    TrainSegArgs,
};

fn ensure_out_dir(ctx: &Ctx) -> Result<()> {
    fs::create_dir_all(&ctx.out_dir)
        .with_context(|| format!("creating output directory {}", ctx.out_dir.display()))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn run_synth(ctx: &Ctx, args: &SynthArgs) -> Result<()> {
    let count = ctx.usize("synth.count", args.count, 220)?;
    let ratio = rln_core::synth::SplitRatio {
        train: ctx.f64("synth.train", args.train, 150.0)?,
        val: ctx.f64("synth.val", args.val, 20.0)?,
        test: ctx.f64("synth.test", args.test, 50.0)?,
    };
    let defaults = PhantomParams::default();
    let template = PhantomParams {
        width: ctx.usize("synth.width", args.width, defaults.width)?,
        height: ctx.usize("synth.height", args.height, defaults.height)?,
        distractor_count: ctx.usize("synth.distractors", args.distractors, defaults.distractor_count)?,
        ..defaults
    };
    let manifest = generate_cohort_with(&template, count, ratio, ctx.sub_seed(SEED_SYNTH), &ctx.out_dir)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let left = manifest.filter(split, Side::Left).count();
        let right = manifest.filter(split, Side::Right).count();
        println!("{split}: {} records ({left} left, {right} right)", left + right);
    }
    println!("dataset written to {}", ctx.out_dir.display());
    Ok(())
}

pub fn run_build_atlas(ctx: &Ctx, args: &BuildAtlasArgs) -> Result<()> {
    ensure_out_dir(ctx)?;
    let sides: Vec<Side> = match args.side.as_deref() {
        Some(s) => vec![s.parse().map_err(anyhow::Error::msg)?],
        None => vec![Side::Left, Side::Right],
    };
    for side in sides {
        let atlas = build_atlas(&args.dataset_dir, side)?;
        let mut csv = String::from("id,landmark_x,landmark_y\n");
        for entry in atlas.entries() {
            csv.push_str(&format!(
                "{},{:.6},{:.6}\n",
                entry.id, entry.landmark.x, entry.landmark.y
            ));
        }
        let path = ctx.out_dir.join(format!("atlas_{side}.csv"));
        write_text(&path, &csv)?;
        let (w, h) = atlas.dims();
        println!(
            "{side}: {} atlas entries ({w}x{h}) -> {}",
            atlas.len(),
            path.display()
        );
    }
    Ok(())
}

pub fn run_bsa(ctx: &Ctx, args: &BsaArgs) -> Result<()> {
    ensure_out_dir(ctx)?;
    let cfg = args.pipeline.resolve(ctx)?;
    let records = collect_candidates(&args.pipeline.dataset_dir, &cfg)?;
    let csv = candidates_to_csv(&records, cfg.bsa.k);
    let path = ctx.out_dir.join("candidates.csv");
    write_text(&path, &csv)?;
    let mean_dice: f64 = records
        .iter()
        .filter_map(|r| r.bsa.ranked.first().map(|e| e.dice))
        .sum::<f64>()
        / records.len().max(1) as f64;
    println!(
        "{} candidates (mean top-1 Dice {:.3}) -> {}",
        records.len(),
        mean_dice,
        path.display()
    );
    Ok(())
}

/// Loads `(image, ground-truth mask)` pairs of one split.
fn load_split_images(
    dataset_dir: &Path,
    split: Split,
) -> Result<Vec<(String, Side, GrayImage, LabelMask, Point2)>> {
    let manifest = read_manifest(manifest_path(dataset_dir))?;
    let mut out = Vec::new();
    for record in manifest.split(split) {
        out.push((
            record.id.clone(),
            record.side,
            read_gray_pgm(image_path(dataset_dir, &record.id))?,
            read_mask_pgm(mask_path(dataset_dir, &record.id))?,
            record.centroid,
        ));
    }
    if out.is_empty() {
        bail!("dataset {} has no {split} records", dataset_dir.display());
    }
    Ok(out)
}

pub fn run_train_seg(ctx: &Ctx, args: &TrainSegArgs) -> Result<()> {
    ensure_out_dir(ctx)?;
    let defaults = SegTrainConfig::default();
    let cfg = SegTrainConfig {
        lr: ctx.f64("seg.lr", args.lr, defaults.lr)?,
        batch: ctx.usize("seg.batch", args.batch, defaults.batch)?,
        epochs: ctx.usize("seg.epochs", args.epochs, defaults.epochs)?,
        decay: ctx.f64("seg.decay", args.decay, defaults.decay)?,
        seed: ctx.sub_seed(SEED_TRAIN_SEG),
    };
    let net_cfg = ToyUNetConfig {
        encoder_channels: ctx.channels(
            "seg.channels",
            args.channels.as_deref(),
            &ToyUNetConfig::default().encoder_channels,
        )?,
    };
    let dataset: Vec<(GrayImage, LabelMask)> = load_split_images(&args.dataset_dir, Split::Train)?
        .into_iter()
        .map(|(_, _, img, mask, _)| (img, mask))
        .collect();
    println!(
        "training segmenter on {} records, {} epochs...",
        dataset.len(),
        cfg.epochs
    );
    let (net, history) = train_toy_unet(&dataset, &net_cfg, &cfg)?;

    let ckpt = ctx.out_dir.join("seg.ckpt");
    net.save(&ckpt)?;
    let mut csv = String::from("epoch,total,cross_entropy,dice\n");
    for (i, ((t, ce), d)) in history
        .total
        .iter()
        .zip(&history.cross_entropy)
        .zip(&history.dice)
        .enumerate()
    {
        csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", i + 1, t, ce, d));
    }
    write_text(&ctx.out_dir.join("seg_history.csv"), &csv)?;
    println!(
        "final loss {:.4} -> {}",
        history.total.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

pub fn run_train_refine(ctx: &Ctx, args: &TrainRefineArgs) -> Result<()> {
    ensure_out_dir(ctx)?;
    let mode = PathMode::parse(&args.mode)?;
    let defaults = RefineTrainConfig::default();
    let per_coordinate = ctx.bool("refine.per_coordinate", args.per_coordinate, false)?;
    let cfg = RefineTrainConfig {
        lr: ctx.f64("refine.lr", args.lr, defaults.lr)?,
        batch: ctx.usize("refine.batch", args.batch, defaults.batch)?,
        epochs: ctx.usize("refine.epochs", args.epochs, defaults.epochs)?,
        jitter_radius: ctx.f64("refine.jitter", args.jitter, defaults.jitter_radius)?,
        seed: ctx.sub_seed(SEED_TRAIN_REFINE),
        loss_form: if per_coordinate {
            SmoothL1Form::PerCoordinate
        } else {
            SmoothL1Form::Joint
        },
    };
    let net_cfg = LocateNetConfig {
        block_channels: ctx.channels(
            "refine.channels",
            args.channels.as_deref(),
            &LocateNetConfig::default().block_channels,
        )?,
        pool_grid: ctx.usize("refine.pool_grid", args.pool_grid, LocateNetConfig::default().pool_grid)?,
    };
    let dataset: Vec<(GrayImage, Point2)> = load_split_images(&args.dataset_dir, Split::Train)?
        .into_iter()
        .map(|(_, _, img, _, c)| (img, c))
        .collect();
    println!(
        "training {} refiner on {} records, {} epochs...",
        mode.as_str(),
        dataset.len(),
        cfg.epochs
    );
    let (net, history) = train_locate_net(&dataset, &net_cfg, &cfg, mode)?;

    let ckpt = ctx.out_dir.join(format!("refine_{}.ckpt", mode.as_str()));
    net.save(&ckpt)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, loss) in history.iter().enumerate() {
        csv.push_str(&format!("{},{:.6}\n", i + 1, loss));
    }
    write_text(
        &ctx.out_dir.join(format!("refine_{}_history.csv", mode.as_str())),
        &csv,
    )?;
    println!(
        "final loss {:.4} -> {}",
        history.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

pub fn run_locate(ctx: &Ctx, args: &LocateArgs) -> Result<()> {
    ensure_out_dir(ctx)?;
    let cfg = args.pipeline.resolve(ctx)?;
    let dir = &args.pipeline.dataset_dir;
    let manifest = read_manifest(manifest_path(dir))?;
    let record = manifest
        .records
        .iter()
        .find(|r| r.id == args.id)
        .with_context(|| format!("record '{}' not found in {}", args.id, dir.display()))?;

    let image = read_gray_pgm(image_path(dir, &record.id))?;
    let ground_truth = read_mask_pgm(mask_path(dir, &record.id))?;
    let provider = match cfg.provider.mode {
        rln_core::seg_provider::ProviderMode::OraclePerturb => {
            SegmentationProvider::oracle(cfg.provider.clone())?
        }
        rln_core::seg_provider::ProviderMode::ToyUnet => {
            let path = cfg
                .seg_checkpoint
                .as_deref()
                .context("toy_unet provider needs --seg-checkpoint")?;
            SegmentationProvider::from_network(rln_core::seg_provider::ToyUNet::<f32>::load(path)?)
        }
    };
    let observed = provider.provide_for(&record.id, &image, &ground_truth)?;
    let atlas = build_atlas(dir, record.side)?;
    let result = infer_candidate(&observed, &atlas, &cfg.bsa)?;

    println!("{CANDIDATES_HEADER}");
    println!("{}", result.csv_row(&record.id, record.side, cfg.bsa.k));
    let mut pred = result.candidate;
    let mut stage = "initialization".to_string();
    if let Some(ckpt) = &args.refine {
        let net = LocateNet::<f32>::load(ckpt)?;
        pred = refine(&image, result.candidate, &net)?;
        stage = net.mode().as_str().to_string();
        println!(
            "{stage}: ({:.2}, {:.2}) from candidate ({:.2}, {:.2})",
            pred.x, pred.y, result.candidate.x, result.candidate.y
        );
    }
    println!(
        "truth: ({:.2}, {:.2}), L1 error {:.2} px",
        record.centroid.x,
        record.centroid.y,
        rln_core::eval::distance(pred, record.centroid)
    );
    let overlay = render_overlay(&observed, pred, record.centroid);
    let overlay_path = ctx.out_dir.join(format!("{}_{stage}.pgm", record.id));
    write_gray_pgm(&overlay_path, &overlay)?;
    println!("overlay -> {}", overlay_path.display());
    Ok(())
}

fn print_reports(reports: &[EvalReport], hit_radius: f64) {
    println!(
        "{:<16} {:>6} {:>4} {:>10} {:>9} {:>10}",
        "stage",
        "side",
        "n",
        "mean(px)",
        "std(px)",
        format!("hit@{hit_radius:.0}(%)")
    );
    for report in reports {
        for s in &report.summaries {
            println!(
                "{:<16} {:>6} {:>4} {:>10.2} {:>9.2} {:>10.1}",
                report.stage, s.side.to_string(), s.n, s.mean_dist, s.std_dist, s.hit_rate_pct
            );
        }
    }
}

pub fn run_eval(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    let mut cfg = args.pipeline.resolve(ctx)?;
    cfg.refine_checkpoint = args.refine.clone();
    let reports = run_pipeline(&args.pipeline.dataset_dir, &ctx.out_dir, &cfg)?;
    print_reports(&reports, cfg.eval.hit_radius);
    println!("artifacts -> {}", ctx.out_dir.display());
    Ok(())
}

pub fn run_ablation(ctx: &Ctx, args: &AblationArgs) -> Result<()> {
    let cfg = args.pipeline.resolve(ctx)?;
    let checkpoints = AblationCheckpoints {
        local: args.local.clone(),
        global: args.global.clone(),
        dual: args.dual.clone(),
    };
    let reports = ablation(&args.pipeline.dataset_dir, &ctx.out_dir, &cfg, &checkpoints)?;
    print_reports(&reports, cfg.eval.hit_radius);
    println!("artifacts -> {}", ctx.out_dir.display());
    Ok(())
}
