//! End-to-end pipeline driver and ablation harness.
//!
//! [`run_pipeline`] evaluates a dataset's test split: each record is
//! segmented, aligned against the training-split atlas of its side to get a
//! candidate point, optionally refined by a trained patch regressor, and
//! scored. It writes four artifacts into the output directory:
//!
//! * `candidates.csv` — the raw shape-alignment candidates (one row per
//!   record, same serialization as the `bsa` subcommand, so running the
//!   stages separately produces byte-identical output);
//! * `predictions.csv` — per-record predictions of every stage that ran;
//! * `report.csv` — per-side aggregates of every stage;
//! * `overlays/{id}.pgm` — the segmentation each record was scored on, with
//!   markers at the final prediction (white) and the truth (black).
//!
//! [`ablation`] reuses one shape-alignment pass to compare the three
//! refinement modes against the unrefined initialization.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use crate::bsa::{
    build_atlas, infer_candidate, AtlasLibrary, BsaConfig, BsaResult, CANDIDATES_HEADER,
};
use crate::error::Error;
use crate::eval::{
    evaluate, predictions_to_csv, render_overlay, report_to_csv, EvalConfig, EvalItem, EvalReport,
};
use crate::imaging::{read_gray_pgm, read_mask_pgm, write_gray_pgm, GrayImage, LabelMask};
use crate::locate_net::{refine, LocateNet, PathMode};
use crate::seg_provider::{ProviderConfig, ProviderMode, SegmentationProvider, ToyUNet};
use crate::synth::{
    image_path, manifest_path, mask_path, read_manifest, ManifestRecord, Side, Split,
};
use crate::Result;

/// Stage label of the unrefined shape-alignment candidate.
pub const STAGE_INITIALIZATION: &str = "initialization";

/// Everything `run_pipeline` needs besides the dataset location.
#[derive(Clone, Debug, Default)]
pub struct PipelineConfig {
    pub provider: ProviderConfig,
    /// Trained segmenter checkpoint, required when the provider mode is
    /// `toy_unet`.
    pub seg_checkpoint: Option<PathBuf>,
    pub bsa: BsaConfig,
    pub eval: EvalConfig,
    /// Trained refinement checkpoint; `None` stops after shape alignment.
    pub refine_checkpoint: Option<PathBuf>,
}

/// One test record with everything the pipeline derived for it.
#[derive(Clone, Debug)]
pub struct PipelineRecord {
    pub record: ManifestRecord,
    pub image: GrayImage,
    /// The segmentation the alignment ran on (not the ground truth).
    pub observed: LabelMask,
    pub bsa: BsaResult,
}

fn make_provider(cfg: &PipelineConfig) -> Result<SegmentationProvider> {
    match cfg.provider.mode {
        ProviderMode::OraclePerturb => SegmentationProvider::oracle(cfg.provider.clone()),
        ProviderMode::ToyUnet => {
            let path = cfg.seg_checkpoint.as_deref().ok_or_else(|| {
                Error::InvalidConfig(
                    "toy_unet provider needs a segmenter checkpoint".to_string(),
                )
            })?;
            Ok(SegmentationProvider::from_network(ToyUNet::<f32>::load(
                path,
            )?))
        }
    }
}

/// Segments and aligns every test record, in manifest order. Builds one
/// atlas per side present in the test split from the training split.
pub fn collect_candidates(
    dataset_dir: impl AsRef<Path>,
    cfg: &PipelineConfig,
) -> Result<Vec<PipelineRecord>> {
    let dir = dataset_dir.as_ref();
    let manifest = read_manifest(manifest_path(dir))?;
    let provider = make_provider(cfg)?;

    let mut atlases: HashMap<Side, AtlasLibrary> = HashMap::new();
    for side in [Side::Left, Side::Right] {
        if manifest.filter(Split::Test, side).next().is_some() {
            atlases.insert(side, build_atlas(dir, side)?);
        }
    }
    if atlases.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut out = Vec::new();
    for record in manifest.split(Split::Test) {
        let image = read_gray_pgm(image_path(dir, &record.id))?;
        let ground_truth = read_mask_pgm(mask_path(dir, &record.id))?;
        let observed = provider.provide_for(&record.id, &image, &ground_truth)?;
        let atlas = &atlases[&record.side];
        let bsa = infer_candidate(&observed, atlas, &cfg.bsa)?;
        out.push(PipelineRecord {
            record: record.clone(),
            image,
            observed,
            bsa,
        });
    }
    Ok(out)
}

/// Serializes shape-alignment candidates, one row per record in input order.
pub fn candidates_to_csv(records: &[PipelineRecord], k: usize) -> String {
    let mut out = String::from(CANDIDATES_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.bsa.csv_row(&r.record.id, r.record.side, k));
        out.push('\n');
    }
    out
}

/// Scores the raw candidates as the `initialization` stage.
pub fn initialization_report(records: &[PipelineRecord], cfg: &EvalConfig) -> Result<EvalReport> {
    let items: Vec<EvalItem> = records
        .iter()
        .map(|r| EvalItem {
            id: r.record.id.clone(),
            side: r.record.side,
            pred: r.bsa.candidate,
            truth: r.record.centroid,
        })
        .collect();
    evaluate(STAGE_INITIALIZATION, &items, cfg)
}

/// Refines every candidate with `net` and scores the result under the
/// network's mode name (`dual`, `local`, or `global`).
pub fn refined_report(
    records: &[PipelineRecord],
    net: &LocateNet<f32>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let items = records
        .iter()
        .map(|r| {
            Ok(EvalItem {
                id: r.record.id.clone(),
                side: r.record.side,
                pred: refine(&r.image, r.bsa.candidate, net)?,
                truth: r.record.centroid,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(net.mode().as_str(), &items, cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_overlays(out_dir: &Path, records: &[PipelineRecord], last: &EvalReport) -> Result<()> {
    let overlay_dir = out_dir.join("overlays");
    make_dir(&overlay_dir)?;
    let by_id: BTreeMap<&str, &PipelineRecord> = records
        .iter()
        .map(|r| (r.record.id.as_str(), r))
        .collect();
    for row in &last.rows {
        let rec = by_id[row.id.as_str()];
        let overlay = render_overlay(&rec.observed, row.pred, row.truth);
        write_gray_pgm(overlay_dir.join(format!("{}.pgm", row.id)), &overlay)?;
    }
    Ok(())
}

/// Runs segmentation, shape alignment, optional refinement, and scoring on
/// the test split, writing all artifacts into `out_dir`. Returns the stage
/// reports in execution order (`initialization` first; the refined stage, if
/// a checkpoint was given, second).
pub fn run_pipeline(
    dataset_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    cfg: &PipelineConfig,
) -> Result<Vec<EvalReport>> {
    let out_dir = out_dir.as_ref();
    make_dir(out_dir)?;

    let records = collect_candidates(dataset_dir, cfg)?;
    write_text(
        &out_dir.join("candidates.csv"),
        &candidates_to_csv(&records, cfg.bsa.k),
    )?;

    let mut reports = vec![initialization_report(&records, &cfg.eval)?];
    if let Some(ckpt) = &cfg.refine_checkpoint {
        let net = LocateNet::<f32>::load(ckpt)?;
        reports.push(refined_report(&records, &net, &cfg.eval)?);
    }

    write_text(&out_dir.join("predictions.csv"), &predictions_to_csv(&reports))?;
    write_text(&out_dir.join("report.csv"), &report_to_csv(&reports))?;
    write_overlays(out_dir, &records, reports.last().expect("at least one stage"))?;
    Ok(reports)
}

/// Checkpoints for the three refinement settings of the ablation table.
#[derive(Clone, Debug)]
pub struct AblationCheckpoints {
    pub local: PathBuf,
    pub global: PathBuf,
    pub dual: PathBuf,
}

impl AblationCheckpoints {
    fn entries(&self) -> [(PathMode, &Path); 3] {
        [
            (PathMode::LocalOnly, self.local.as_path()),
            (PathMode::GlobalOnly, self.global.as_path()),
            (PathMode::Dual, self.dual.as_path()),
        ]
    }
}

/// Compares the unrefined initialization against all three refinement modes
/// on one shared shape-alignment pass. Returns four reports in table order —
/// `initialization`, `local`, `global`, `dual` — and writes the combined
/// `predictions.csv` and `report.csv` into `out_dir`.
///
/// Each checkpoint must contain a network trained in the matching mode;
/// a mismatch is a config error rather than a silently mislabeled row.
pub fn ablation(
    dataset_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    cfg: &PipelineConfig,
    checkpoints: &AblationCheckpoints,
) -> Result<Vec<EvalReport>> {
    let out_dir = out_dir.as_ref();
    make_dir(out_dir)?;

    let records = collect_candidates(dataset_dir, cfg)?;
    let mut reports = vec![initialization_report(&records, &cfg.eval)?];
    for (mode, path) in checkpoints.entries() {
        let net = LocateNet::<f32>::load(path)?;
        if net.mode() != mode {
            return Err(Error::InvalidConfig(format!(
                "ablation checkpoint {} holds a {} network, expected {}",
                path.display(),
                net.mode().as_str(),
                mode.as_str()
            )));
        }
        reports.push(refined_report(&records, &net, &cfg.eval)?);
    }

    write_text(&out_dir.join("predictions.csv"), &predictions_to_csv(&reports))?;
    write_text(&out_dir.join("report.csv"), &report_to_csv(&reports))?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locate_net::{train_locate_net, LocateNetConfig, RefineTrainConfig};
    use crate::synth::{generate_cohort, SplitRatio};

    fn tiny_cohort(dir: &Path, seed: u64) {
        generate_cohort(
            10,
            SplitRatio {
                train: 0.6,
                val: 0.2,
                test: 0.2,
            },
            seed,
            dir,
        )
        .unwrap();
    }

    fn fast_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.bsa.k = 1;
        // Trim the optimizer budget: these tests check plumbing, not
        // registration quality.
        cfg.bsa.registration.max_evaluations = 60;
        cfg.bsa.registration.restarts = 1;
        cfg
    }

    #[test]
    fn pipeline_without_refinement_writes_all_artifacts() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        tiny_cohort(data.path(), 11);
        let cfg = fast_cfg();

        let reports = run_pipeline(data.path(), out.path(), &cfg).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].stage, STAGE_INITIALIZATION);
        assert_eq!(reports[0].rows.len(), 2); // 10 * 0.2 test records

        let candidates = fs::read_to_string(out.path().join("candidates.csv")).unwrap();
        assert!(candidates.starts_with(CANDIDATES_HEADER));
        assert_eq!(candidates.lines().count(), 3);
        let predictions = fs::read_to_string(out.path().join("predictions.csv")).unwrap();
        assert_eq!(predictions.lines().count(), 3);
        let report = fs::read_to_string(out.path().join("report.csv")).unwrap();
        assert_eq!(report.lines().count(), 1 + reports[0].summaries.len());
        for row in &reports[0].rows {
            assert!(out
                .path()
                .join("overlays")
                .join(format!("{}.pgm", row.id))
                .is_file());
        }
    }

    #[test]
    fn pipeline_is_deterministic_and_matches_candidate_recompute() {
        let data = tempfile::tempdir().unwrap();
        tiny_cohort(data.path(), 23);
        let cfg = fast_cfg();

        let out1 = tempfile::tempdir().unwrap();
        let out2 = tempfile::tempdir().unwrap();
        run_pipeline(data.path(), out1.path(), &cfg).unwrap();
        run_pipeline(data.path(), out2.path(), &cfg).unwrap();
        for name in ["candidates.csv", "predictions.csv", "report.csv"] {
            let a = fs::read(out1.path().join(name)).unwrap();
            let b = fs::read(out2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }

        // The candidates file is exactly what the alignment stage alone
        // produces: composition adds nothing.
        let records = collect_candidates(data.path(), &cfg).unwrap();
        let direct = candidates_to_csv(&records, cfg.bsa.k);
        let written = fs::read_to_string(out1.path().join("candidates.csv")).unwrap();
        assert_eq!(direct, written);
    }

    #[test]
    fn missing_refinement_checkpoint_is_an_error() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        tiny_cohort(data.path(), 31);
        let mut cfg = fast_cfg();
        cfg.refine_checkpoint = Some(out.path().join("nope.ckpt"));
        assert!(run_pipeline(data.path(), out.path(), &cfg).is_err());
    }

    #[test]
    fn unet_provider_requires_a_checkpoint() {
        let mut cfg = fast_cfg();
        cfg.provider.mode = ProviderMode::ToyUnet;
        assert!(matches!(
            make_provider(&cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    fn train_tiny_net(
        dataset: &[(GrayImage, crate::imaging::Point2)],
        mode: PathMode,
        path: &Path,
    ) {
        let net_cfg = LocateNetConfig {
            block_channels: vec![2, 4],
            pool_grid: 2,
        };
        let cfg = RefineTrainConfig {
            epochs: 1,
            batch: 2,
            seed: 5,
            ..RefineTrainConfig::default()
        };
        let (net, _) = train_locate_net(dataset, &net_cfg, &cfg, mode).unwrap();
        net.save(path).unwrap();
    }

    #[test]
    fn ablation_row_order_is_fixed_and_initialization_matches_bsa_only() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        tiny_cohort(data.path(), 47);
        let cfg = fast_cfg();

        // Minimal training set: two train-split records.
        let manifest = read_manifest(manifest_path(data.path())).unwrap();
        let dataset: Vec<(GrayImage, crate::imaging::Point2)> = manifest
            .split(Split::Train)
            .take(2)
            .map(|r| {
                (
                    read_gray_pgm(image_path(data.path(), &r.id)).unwrap(),
                    r.centroid,
                )
            })
            .collect();
        let ckpts = AblationCheckpoints {
            local: out.path().join("local.ckpt"),
            global: out.path().join("global.ckpt"),
            dual: out.path().join("dual.ckpt"),
        };
        train_tiny_net(&dataset, PathMode::LocalOnly, &ckpts.local);
        train_tiny_net(&dataset, PathMode::GlobalOnly, &ckpts.global);
        train_tiny_net(&dataset, PathMode::Dual, &ckpts.dual);

        let reports = ablation(data.path(), out.path(), &cfg, &ckpts).unwrap();
        let stages: Vec<&str> = reports.iter().map(|r| r.stage.as_str()).collect();
        assert_eq!(stages, ["initialization", "local", "global", "dual"]);
        for r in &reports {
            assert_eq!(r.rows.len(), 2);
        }

        // The initialization row is the plain alignment-only evaluation.
        let records = collect_candidates(data.path(), &cfg).unwrap();
        let direct = initialization_report(&records, &cfg.eval).unwrap();
        for (a, b) in reports[0].rows.iter().zip(&direct.rows) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.distance_px, b.distance_px);
        }

        // A checkpoint trained in the wrong mode is rejected.
        let swapped = AblationCheckpoints {
            local: ckpts.dual.clone(),
            global: ckpts.global.clone(),
            dual: ckpts.dual.clone(),
        };
        assert!(matches!(
            ablation(data.path(), out.path(), &cfg, &swapped),
            Err(Error::InvalidConfig(_))
        ));
    }
}
