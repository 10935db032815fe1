//! Localization metrics and reporting.
//!
//! The error metric is the L1 (city-block) distance between the predicted
//! and true centroids; the hit rate counts predictions that land inside a
//! fixed-radius neighborhood of the truth (radius 15 px by default, disk
//! shape selectable between Euclidean and L1). Reports aggregate per side
//! with population mean ± standard deviation and a percentage hit rate.

use crate::error::Error;
use crate::imaging::{GrayImage, LabelMask, Point2};
use crate::synth::Side;
use crate::Result;

/// Neighborhood shape for the hit criterion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NeighborhoodNorm {
    /// Disk: ‖pred − truth‖₂ ≤ r.
    #[default]
    Euclidean,
    /// Diamond: ‖pred − truth‖₁ ≤ r.
    L1,
}

impl NeighborhoodNorm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(NeighborhoodNorm::Euclidean),
            "l1" => Ok(NeighborhoodNorm::L1),
            other => Err(Error::InvalidConfig(format!(
                "unknown neighborhood norm '{other}' (expected euclidean or l1)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            NeighborhoodNorm::Euclidean => "euclidean",
            NeighborhoodNorm::L1 => "l1",
        }
    }
}

/// Hit-criterion knobs.
#[derive(Clone, Debug)]
pub struct EvalConfig {
    /// Neighborhood radius, pixels.
    pub hit_radius: f64,
    pub neighborhood_norm: NeighborhoodNorm,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            hit_radius: 15.0,
            neighborhood_norm: NeighborhoodNorm::Euclidean,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hit_radius > 0.0) || !self.hit_radius.is_finite() {
            return Err(Error::InvalidConfig(
                "hit_radius must be finite and positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Localization error: the L1 norm `|Δx| + |Δy|`, exactly.
pub fn distance(pred: Point2, truth: Point2) -> f64 {
    (pred.x - truth.x).abs() + (pred.y - truth.y).abs()
}

/// Euclidean distance, reported alongside the L1 error for reference.
pub fn l2_distance(pred: Point2, truth: Point2) -> f64 {
    pred.dist(&truth)
}

/// Whether `pred` lies in the radius-`hit_radius` neighborhood of `truth`
/// under the configured norm. The boundary is inclusive: a prediction at
/// exactly the radius still counts.
pub fn hit(pred: Point2, truth: Point2, cfg: &EvalConfig) -> bool {
    let d = match cfg.neighborhood_norm {
        NeighborhoodNorm::Euclidean => l2_distance(pred, truth),
        NeighborhoodNorm::L1 => distance(pred, truth),
    };
    d <= cfg.hit_radius
}

/// One prediction to score.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: String,
    pub side: Side,
    pub pred: Point2,
    pub truth: Point2,
}

/// One scored record.
#[derive(Clone, Debug)]
pub struct RecordEval {
    pub id: String,
    pub side: Side,
    pub pred: Point2,
    pub truth: Point2,
    /// L1 error (the reported distance).
    pub distance_px: f64,
    /// Euclidean error, kept in the report struct for reference; not part
    /// of the CSV schema.
    pub distance_l2_px: f64,
    pub hit: bool,
}

/// Per-side aggregate.
#[derive(Clone, Debug)]
pub struct SideSummary {
    pub side: Side,
    pub n: usize,
    /// Mean L1 distance, px.
    pub mean_dist: f64,
    /// Population standard deviation of the L1 distance, px.
    pub std_dist: f64,
    /// Percentage of records whose prediction hit the neighborhood.
    pub hit_rate_pct: f64,
}

/// Scored records of one pipeline stage plus their per-side aggregates.
#[derive(Clone, Debug)]
pub struct EvalReport {
    /// Stage label: `initialization`, `local`, `global`, or `dual`.
    pub stage: String,
    /// Per-record rows, sorted by record id.
    pub rows: Vec<RecordEval>,
    /// One summary per side present, left before right.
    pub summaries: Vec<SideSummary>,
}

/// Scores a stage's predictions and aggregates them per side.
pub fn evaluate(stage: &str, items: &[EvalItem], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    for item in items {
        if !item.pred.is_finite() || !item.truth.is_finite() {
            return Err(Error::NonFinite(format!("prediction for record {}", item.id)));
        }
    }
    let mut rows: Vec<RecordEval> = items
        .iter()
        .map(|item| RecordEval {
            id: item.id.clone(),
            side: item.side,
            pred: item.pred,
            truth: item.truth,
            distance_px: distance(item.pred, item.truth),
            distance_l2_px: l2_distance(item.pred, item.truth),
            hit: hit(item.pred, item.truth, cfg),
        })
        .collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let summaries = [Side::Left, Side::Right]
        .into_iter()
        .filter_map(|side| summarize(side, &rows))
        .collect();
    Ok(EvalReport {
        stage: stage.to_string(),
        rows,
        summaries,
    })
}

fn summarize(side: Side, rows: &[RecordEval]) -> Option<SideSummary> {
    let dists: Vec<f64> = rows
        .iter()
        .filter(|r| r.side == side)
        .map(|r| r.distance_px)
        .collect();
    if dists.is_empty() {
        return None;
    }
    let n = dists.len();
    let mean = dists.iter().sum::<f64>() / n as f64;
    let var = dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    let hits = rows.iter().filter(|r| r.side == side && r.hit).count();
    Some(SideSummary {
        side,
        n,
        mean_dist: mean,
        std_dist: var.sqrt(),
        hit_rate_pct: 100.0 * hits as f64 / n as f64,
    })
}

/// Fixed header of the per-record predictions CSV.
pub const PREDICTIONS_HEADER: &str =
    "id,side,stage,pred_x,pred_y,true_x,true_y,distance_px,hit";

/// Fixed header of the per-side report CSV.
pub const REPORT_HEADER: &str = "stage,side,n,mean_dist,std_dist,hit_rate_pct";

/// Serializes per-record rows of the given reports, one line per record,
/// reports in the given order, rows already id-sorted within each.
pub fn predictions_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(PREDICTIONS_HEADER);
    out.push('\n');
    for report in reports {
        for r in &report.rows {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                r.id,
                r.side,
                report.stage,
                r.pred.x,
                r.pred.y,
                r.truth.x,
                r.truth.y,
                r.distance_px,
                u8::from(r.hit),
            ));
        }
    }
    out
}

/// Serializes the per-side aggregates of the given reports.
pub fn report_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for report in reports {
        for s in &report.summaries {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}\n",
                report.stage, s.side, s.n, s.mean_dist, s.std_dist, s.hit_rate_pct,
            ));
        }
    }
    out
}

/// Side length of the square markers stamped on overlays.
pub const MARKER_SIZE: usize = 3;

/// Renders a review overlay: the label mask as a dim background with a 3×3
/// black square at the true centroid and a 3×3 white square at the
/// prediction (drawn last, so it stays visible when the two overlap).
pub fn render_overlay(mask: &LabelMask, pred: Point2, truth: Point2) -> GrayImage {
    let (w, h) = (mask.width(), mask.height());
    let mut img = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            img.set(x, y, mask.get(x, y) as f32 * 60.0 / 255.0);
        }
    }
    stamp(&mut img, truth, 0.0);
    stamp(&mut img, pred, 1.0);
    img
}

fn stamp(img: &mut GrayImage, at: Point2, value: f32) {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let cx = at.x.round() as isize;
    let cy = at.y.round() as isize;
    let r = (MARKER_SIZE / 2) as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx + dx, cy + dy);
            if x >= 0 && x < w && y >= 0 && y < h {
                img.set(x as usize, y as usize, value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_is_the_l1_norm_exactly() {
        assert_eq!(distance(Point2::new(1.0, 2.0), Point2::new(1.0, 2.0)), 0.0);
        assert_eq!(distance(Point2::new(3.0, 4.0), Point2::new(0.0, 0.0)), 7.0);
        assert_eq!(distance(Point2::new(0.0, 0.0), Point2::new(3.0, 4.0)), 7.0);
        assert_eq!(
            distance(Point2::new(-1.5, 2.0), Point2::new(1.0, -0.5)),
            5.0
        );
    }

    #[test]
    fn hit_boundary_is_inclusive() {
        let cfg = EvalConfig::default();
        let origin = Point2::new(40.0, 40.0);
        assert!(hit(origin, origin, &cfg));
        // Exactly on the Euclidean boundary: offset (15, 0) and the 9-12-15
        // right triangle.
        assert!(hit(Point2::new(55.0, 40.0), origin, &cfg));
        assert!(hit(Point2::new(49.0, 52.0), origin, &cfg));
        // Just outside.
        assert!(!hit(Point2::new(56.0, 40.0), origin, &cfg));
        assert!(!hit(Point2::new(49.0, 52.5), origin, &cfg));
    }

    #[test]
    fn neighborhood_norm_changes_the_disk_shape() {
        let euclid = EvalConfig::default();
        let l1 = EvalConfig {
            neighborhood_norm: NeighborhoodNorm::L1,
            ..EvalConfig::default()
        };
        let origin = Point2::new(0.0, 0.0);
        // (8, 8): Euclidean 11.3 ≤ 15 hits, L1 16 > 15 misses.
        let p = Point2::new(8.0, 8.0);
        assert!(hit(p, origin, &euclid));
        assert!(!hit(p, origin, &l1));
        // L1 boundary is inclusive too.
        assert!(hit(Point2::new(7.0, 8.0), origin, &l1));
    }

    #[test]
    fn config_requires_positive_radius() {
        let bad = EvalConfig {
            hit_radius: 0.0,
            ..EvalConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(EvalConfig::default().validate().is_ok());
    }

    fn sample_items() -> Vec<EvalItem> {
        vec![
            EvalItem {
                id: "p003_left".into(),
                side: Side::Left,
                pred: Point2::new(52.0, 60.0),
                truth: Point2::new(50.0, 58.0),
            },
            EvalItem {
                id: "p001_left".into(),
                side: Side::Left,
                pred: Point2::new(10.0, 10.0),
                truth: Point2::new(40.0, 40.0),
            },
            EvalItem {
                id: "p002_right".into(),
                side: Side::Right,
                pred: Point2::new(200.0, 100.0),
                truth: Point2::new(195.0, 99.0),
            },
        ]
    }

    #[test]
    fn report_aggregates_match_rows_and_counts() {
        let report = evaluate("initialization", &sample_items(), &EvalConfig::default()).unwrap();
        assert_eq!(report.rows.len(), 3);
        // Rows are sorted by id.
        let ids: Vec<&str> = report.rows.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["p001_left", "p002_right", "p003_left"]);
        assert_eq!(report.summaries.len(), 2);
        for s in &report.summaries {
            let dists: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.side == s.side)
                .map(|r| r.distance_px)
                .collect();
            assert_eq!(s.n, dists.len());
            let mean = dists.iter().sum::<f64>() / s.n as f64;
            let var = dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / s.n as f64;
            assert!((s.mean_dist - mean).abs() < 1e-9);
            assert!((s.std_dist - var.sqrt()).abs() < 1e-9);
            assert!((0.0..=100.0).contains(&s.hit_rate_pct));
        }
        // Left: one hit (distance 4) and one miss (60) → 50%.
        let left = &report.summaries[0];
        assert_eq!(left.side, Side::Left);
        assert_eq!(left.n, 2);
        assert!((left.mean_dist - 32.0).abs() < 1e-12);
        assert!((left.hit_rate_pct - 50.0).abs() < 1e-12);
        // Right: single record, distance 6, hit.
        let right = &report.summaries[1];
        assert_eq!(right.n, 1);
        assert!((right.mean_dist - 6.0).abs() < 1e-12);
        assert_eq!(right.std_dist, 0.0);
        assert!((right.hit_rate_pct - 100.0).abs() < 1e-12);
    }

    #[test]
    fn csv_schemas_are_pinned() {
        let report = evaluate("initialization", &sample_items(), &EvalConfig::default()).unwrap();
        let preds = predictions_to_csv(std::slice::from_ref(&report));
        let mut lines = preds.lines();
        assert_eq!(
            lines.next().unwrap(),
            "id,side,stage,pred_x,pred_y,true_x,true_y,distance_px,hit"
        );
        assert_eq!(preds.lines().count(), 4);
        let first = lines.next().unwrap();
        assert_eq!(
            first,
            "p001_left,left,initialization,10.000000,10.000000,40.000000,40.000000,60.000000,0"
        );
        let rep = report_to_csv(std::slice::from_ref(&report));
        let mut lines = rep.lines();
        assert_eq!(lines.next().unwrap(), "stage,side,n,mean_dist,std_dist,hit_rate_pct");
        assert_eq!(rep.lines().count(), 3);
        assert_eq!(
            lines.next().unwrap(),
            "initialization,left,2,32.000000,28.000000,50.000000"
        );
    }

    #[test]
    fn non_finite_predictions_are_rejected() {
        let items = vec![EvalItem {
            id: "x".into(),
            side: Side::Left,
            pred: Point2::new(f64::NAN, 0.0),
            truth: Point2::new(0.0, 0.0),
        }];
        assert!(evaluate("initialization", &items, &EvalConfig::default()).is_err());
    }

    #[test]
    fn overlay_stamps_markers_on_the_mask_background() {
        let mut mask = LabelMask::zeros(32, 32);
        for y in 10..20 {
            for x in 10..20 {
                mask.set(x, y, 2);
            }
        }
        let pred = Point2::new(25.0, 6.0);
        let truth = Point2::new(14.0, 14.0);
        let img = render_overlay(&mask, pred, truth);
        assert_eq!((img.width(), img.height()), (32, 32));
        // Prediction marker: 3×3 white block.
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                assert_eq!(img.get((25 + dx) as usize, (6 + dy) as usize), 1.0);
                assert_eq!(img.get((14 + dx) as usize, (14 + dy) as usize), 0.0);
            }
        }
        // Mask background outside the markers.
        assert!((img.get(11, 18) - 2.0 * 60.0 / 255.0).abs() < 1e-6);
        assert_eq!(img.get(0, 0), 0.0);
        // Markers at a corner stay in bounds (no panic) and prediction wins
        // when the two overlap.
        let both = render_overlay(&mask, Point2::new(0.0, 0.0), Point2::new(0.0, 0.0));
        assert_eq!(both.get(0, 0), 1.0);
        assert_eq!(both.get(1, 1), 1.0);
    }

    #[test]
    fn hit_implies_l1_distance_at_most_twice_the_radius() {
        // Deterministic sweep standing in for a random property: any hit
        // under either norm keeps the L1 distance within 2r.
        for cfg in [
            EvalConfig::default(),
            EvalConfig {
                neighborhood_norm: NeighborhoodNorm::L1,
                ..EvalConfig::default()
            },
        ] {
            let truth = Point2::new(100.0, 100.0);
            for i in 0..500 {
                let angle = i as f64 * 0.03;
                let radius = (i as f64 * 0.07) % 25.0;
                let pred = Point2::new(
                    truth.x + radius * angle.cos(),
                    truth.y + radius * angle.sin(),
                );
                if hit(pred, truth, &cfg) {
                    assert!(distance(pred, truth) <= 2.0 * cfg.hit_radius);
                }
            }
        }
    }
}
