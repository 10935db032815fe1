//! Property tests for the evaluation metrics: norm relationships, the
//! hit-radius guarantee, and consistency between per-record rows and the
//! aggregated side summaries.

use proptest::prelude::*;
use rln_core::eval::{
    distance, evaluate, hit, l2_distance, predictions_to_csv, EvalConfig, EvalItem,
    NeighborhoodNorm,
};
use rln_core::imaging::Point2;
use rln_core::synth::Side;

fn coord() -> impl Strategy<Value = f64> {
    // Finite coordinates in a generous image-like range.
    -512.0..512.0f64
}

fn point() -> impl Strategy<Value = Point2> {
    (coord(), coord()).prop_map(|(x, y)| Point2::new(x, y))
}

proptest! {
    #[test]
    fn distance_is_symmetric_nonnegative_and_zero_at_equality(p in point(), t in point()) {
        let d = distance(p, t);
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d.to_bits(), distance(t, p).to_bits());
        prop_assert_eq!(distance(p, p), 0.0);
        // The reported distance is exactly the L1 norm of the offset.
        prop_assert_eq!(d, (p.x - t.x).abs() + (p.y - t.y).abs());
    }

    #[test]
    fn l1_and_l2_norms_bracket_each_other(p in point(), t in point()) {
        let l1 = distance(p, t);
        let l2 = l2_distance(p, t);
        // l2 <= l1 <= sqrt(2) * l2 in two dimensions.
        prop_assert!(l2 <= l1 + 1e-12);
        prop_assert!(l1 <= 2f64.sqrt() * l2 + 1e-12);
    }

    #[test]
    fn euclidean_hit_bounds_the_reported_l1_distance(
        p in point(),
        t in point(),
        r in 1.0..64.0f64,
    ) {
        let cfg = EvalConfig { hit_radius: r, ..EvalConfig::default() };
        if hit(p, t, &cfg) {
            // Euclidean radius r allows an L1 distance of at most sqrt(2)*r < 2r.
            prop_assert!(distance(p, t) <= 2.0 * r);
        } else {
            prop_assert!(l2_distance(p, t) > r);
        }
    }

    #[test]
    fn l1_hit_bounds_the_reported_distance_by_the_radius(
        p in point(),
        t in point(),
        r in 1.0..64.0f64,
    ) {
        let cfg = EvalConfig { hit_radius: r, neighborhood_norm: NeighborhoodNorm::L1 };
        prop_assert_eq!(hit(p, t, &cfg), distance(p, t) <= r);
    }

    #[test]
    fn report_aggregates_match_their_rows(
        coords in prop::collection::vec((coord(), coord(), coord(), coord(), any::<bool>()), 1..40),
    ) {
        let items: Vec<EvalItem> = coords
            .iter()
            .enumerate()
            .map(|(i, &(px, py, tx, ty, left))| EvalItem {
                id: format!("rec{i:03}"),
                side: if left { Side::Left } else { Side::Right },
                pred: Point2::new(px, py),
                truth: Point2::new(tx, ty),
            })
            .collect();
        let cfg = EvalConfig::default();
        let report = evaluate("stage", &items, &cfg).unwrap();

        // Rows are sorted by id and cover every item exactly once.
        prop_assert_eq!(report.rows.len(), items.len());
        for pair in report.rows.windows(2) {
            prop_assert!(pair[0].id <= pair[1].id);
        }

        let mut total_n = 0;
        for summary in &report.summaries {
            let side_rows: Vec<_> = report
                .rows
                .iter()
                .filter(|r| r.side == summary.side)
                .collect();
            prop_assert_eq!(summary.n, side_rows.len());
            total_n += summary.n;

            let mean = side_rows.iter().map(|r| r.distance_px).sum::<f64>()
                / side_rows.len() as f64;
            let var = side_rows
                .iter()
                .map(|r| (r.distance_px - mean).powi(2))
                .sum::<f64>()
                / side_rows.len() as f64;
            let hits = side_rows.iter().filter(|r| r.hit).count();
            prop_assert!((summary.mean_dist - mean).abs() < 1e-9);
            prop_assert!((summary.std_dist - var.sqrt()).abs() < 1e-9);
            prop_assert!(
                (summary.hit_rate_pct - 100.0 * hits as f64 / side_rows.len() as f64).abs()
                    < 1e-9
            );
        }
        prop_assert_eq!(total_n, items.len());

        // One CSV line per record plus the header.
        let csv = predictions_to_csv(std::slice::from_ref(&report));
        prop_assert_eq!(csv.trim_end().lines().count(), items.len() + 1);
    }
}
