//! Shape alignment: turn an atlas of annotated masks into a nerve-location
//! candidate for a query mask.
//!
//! For every atlas entry, the entry's mask is registered onto the query mask
//! (`registration::register`), the registered overlap is scored with Dice,
//! and the entry's stored nerve landmark is pushed through the recovered
//! transform. Entries are ranked by Dice (ties keep atlas order) and the
//! candidate is the arithmetic mean of the top-`k` transformed landmarks —
//! exemplar-based inference: the best-matching anatomies vote on where the
//! nerve should be.

use std::path::Path;

use rayon::prelude::*;

use crate::config::derive_seed;
use crate::error::Error;
use crate::imaging::{dice, read_mask_pgm, resample_mask, AffineTransform2D, LabelMask, Point2};
use crate::registration::{register, RegistrationConfig};
use crate::synth::{manifest_path, mask_path, read_manifest, Side, Split};
use crate::Result;

/// One annotated atlas subject: an anatomy mask and its nerve landmark.
#[derive(Debug, Clone)]
pub struct AtlasEntry {
    pub id: String,
    pub mask: LabelMask,
    pub landmark: Point2,
}

impl AtlasEntry {
    /// Validates the entry invariants: non-empty mask, landmark inside the
    /// mask frame.
    pub fn new(id: impl Into<String>, mask: LabelMask, landmark: Point2) -> Result<Self> {
        if mask.foreground_count() == 0 {
            return Err(Error::EmptyMask);
        }
        let (w, h) = (mask.width() as f64, mask.height() as f64);
        if !(landmark.is_finite()
            && landmark.x >= 0.0
            && landmark.x <= w - 1.0
            && landmark.y >= 0.0
            && landmark.y <= h - 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "landmark ({}, {}) outside the {}x{} mask frame",
                landmark.x,
                landmark.y,
                mask.width(),
                mask.height()
            )));
        }
        Ok(AtlasEntry {
            id: id.into(),
            mask,
            landmark,
        })
    }
}

/// An ordered, single-side collection of atlas entries with shared dimensions.
#[derive(Debug, Clone)]
pub struct AtlasLibrary {
    entries: Vec<AtlasEntry>,
    side: Side,
}

impl AtlasLibrary {
    pub fn new(entries: Vec<AtlasEntry>, side: Side) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyAtlas);
        }
        let (w, h) = (entries[0].mask.width(), entries[0].mask.height());
        let mut ids = std::collections::HashSet::new();
        for e in &entries {
            if e.mask.width() != w || e.mask.height() != h {
                return Err(Error::DimensionMismatch(
                    w,
                    h,
                    e.mask.width(),
                    e.mask.height(),
                ));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate atlas entry id `{}`",
                    e.id
                )));
            }
        }
        Ok(AtlasLibrary { entries, side })
    }

    pub fn entries(&self) -> &[AtlasEntry] {
        &self.entries
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.entries[0].mask.width(), self.entries[0].mask.height())
    }
}

/// Knobs for candidate inference.
#[derive(Debug, Clone)]
pub struct BsaConfig {
    /// How many of the best-matching entries vote on the candidate.
    pub k: usize,
    /// Weight the vote by Dice score instead of a plain mean. Off by default:
    /// the plain top-k average is the reference behavior.
    pub dice_weighted: bool,
    pub registration: RegistrationConfig,
}

impl Default for BsaConfig {
    fn default() -> Self {
        BsaConfig {
            k: 5,
            dice_weighted: false,
            registration: RegistrationConfig::default(),
        }
    }
}

/// One atlas entry's contribution, after registration.
#[derive(Debug, Clone)]
pub struct RankedEntry {
    pub id: String,
    pub dice: f64,
    /// The entry's landmark pushed through the recovered transform.
    pub landmark: Point2,
    pub transform: AffineTransform2D,
}

/// The inference outcome for one query.
#[derive(Debug, Clone)]
pub struct BsaResult {
    /// Mean of the top-k transformed landmarks, clamped to the image frame.
    pub candidate: Point2,
    /// All entries, sorted by Dice descending (ties keep atlas order).
    pub ranked: Vec<RankedEntry>,
}

/// Fixed header of the candidates CSV assembled from [`BsaResult::csv_row`].
pub const CANDIDATES_HEADER: &str = "id,side,cand_x,cand_y,top1_dice,topk_ids";

impl BsaResult {
    /// `query_id, side, candidate_x, candidate_y, top1_dice, topk_ids`
    /// with the top-k ids joined by `;`.
    pub fn csv_row(&self, query_id: &str, side: Side, k: usize) -> String {
        let topk: Vec<&str> = self.ranked[..k.min(self.ranked.len())]
            .iter()
            .map(|r| r.id.as_str())
            .collect();
        format!(
            "{},{},{:.6},{:.6},{:.6},{}",
            query_id,
            side,
            self.candidate.x,
            self.candidate.y,
            self.ranked.first().map_or(0.0, |r| r.dice),
            topk.join(";")
        )
    }
}

/// Run the alignment for one query mask against a whole atlas.
///
/// Each entry's registration derives its seed from the entry id (not its
/// list position), so permuting the atlas changes nothing but the order of
/// exact-tie groups in the ranking.
pub fn infer_candidate(
    query: &LabelMask,
    atlas: &AtlasLibrary,
    cfg: &BsaConfig,
) -> Result<BsaResult> {
    let (aw, ah) = atlas.dims();
    if query.width() != aw || query.height() != ah {
        return Err(Error::DimensionMismatch(
            aw,
            ah,
            query.width(),
            query.height(),
        ));
    }
    if cfg.k < 1 || cfg.k > atlas.len() {
        return Err(Error::TopKOutOfRange {
            k: cfg.k,
            len: atlas.len(),
        });
    }
    if query.foreground_count() == 0 {
        return Err(Error::EmptyMask);
    }

    // Registration fans out per entry; collect() preserves entry order, so
    // the outcome is schedule-independent.
    let ranked: Vec<RankedEntry> = atlas
        .entries
        .par_iter()
        .map(|entry| -> Result<RankedEntry> {
            let reg_cfg = RegistrationConfig {
                seed: derive_seed(cfg.registration.seed, &format!("reg:{}", entry.id)),
                ..cfg.registration.clone()
            };
            let reg = register(&entry.mask, query, &reg_cfg)?;
            let aligned = resample_mask(&entry.mask, &reg.transform, aw, ah)?;
            let score = dice(&aligned, query)?;
            Ok(RankedEntry {
                id: entry.id.clone(),
                dice: score,
                landmark: reg.transform.apply(entry.landmark),
                transform: reg.transform,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(rank_and_fuse(ranked, cfg, aw, ah))
}

/// The same ranking and top-k fusion, but with every atlas entry kept in
/// place (identity transforms, Dice of the unregistered masks). This is the
/// alignment ablation: comparing it against [`infer_candidate`] measures
/// what the registration step contributes.
pub fn infer_candidate_unregistered(
    query: &LabelMask,
    atlas: &AtlasLibrary,
    cfg: &BsaConfig,
) -> Result<BsaResult> {
    let (aw, ah) = atlas.dims();
    if query.width() != aw || query.height() != ah {
        return Err(Error::DimensionMismatch(
            aw,
            ah,
            query.width(),
            query.height(),
        ));
    }
    if cfg.k < 1 || cfg.k > atlas.len() {
        return Err(Error::TopKOutOfRange {
            k: cfg.k,
            len: atlas.len(),
        });
    }
    if query.foreground_count() == 0 {
        return Err(Error::EmptyMask);
    }
    let ranked = atlas
        .entries
        .iter()
        .map(|entry| -> Result<RankedEntry> {
            Ok(RankedEntry {
                id: entry.id.clone(),
                dice: dice(&entry.mask, query)?,
                landmark: entry.landmark,
                transform: AffineTransform2D::identity(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_and_fuse(ranked, cfg, aw, ah))
}

/// Sorts entries by Dice (descending, stable within ties) and averages the
/// top-k landmarks into a clamped candidate.
fn rank_and_fuse(
    mut ranked: Vec<RankedEntry>,
    cfg: &BsaConfig,
    width: usize,
    height: usize,
) -> BsaResult {
    ranked.sort_by(|a, b| b.dice.partial_cmp(&a.dice).expect("dice is never NaN"));

    let top = &ranked[..cfg.k];
    let candidate = if cfg.dice_weighted {
        let wsum: f64 = top.iter().map(|r| r.dice).sum();
        if wsum > 0.0 {
            Point2::new(
                top.iter().map(|r| r.dice * r.landmark.x).sum::<f64>() / wsum,
                top.iter().map(|r| r.dice * r.landmark.y).sum::<f64>() / wsum,
            )
        } else {
            mean_point(top)
        }
    } else {
        mean_point(top)
    };
    BsaResult {
        candidate: candidate.clamped(width, height),
        ranked,
    }
}

fn mean_point(entries: &[RankedEntry]) -> Point2 {
    let n = entries.len() as f64;
    Point2::new(
        entries.iter().map(|r| r.landmark.x).sum::<f64>() / n,
        entries.iter().map(|r| r.landmark.y).sum::<f64>() / n,
    )
}

/// Load the training-split entries of one side from a dataset directory, in
/// manifest order. The stored nerve centroid becomes the entry landmark.
pub fn build_atlas(dataset_dir: impl AsRef<Path>, side: Side) -> Result<AtlasLibrary> {
    let dir = dataset_dir.as_ref();
    let manifest = read_manifest(manifest_path(dir))?;
    let mut entries = Vec::new();
    for record in manifest.filter(Split::Train, side) {
        let mask = read_mask_pgm(mask_path(dir, &record.id))?;
        entries.push(AtlasEntry::new(
            record.id.clone(),
            mask,
            record.centroid,
        )?);
    }
    AtlasLibrary::new(entries, side)
}
