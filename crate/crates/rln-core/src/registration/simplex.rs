//! A small deterministic Nelder-Mead simplex minimizer.
//!
//! The registration objective (label mutual information under nearest-neighbor
//! resampling) is piecewise constant, so derivative-free search is the right
//! tool. This implementation uses the standard reflection/expansion/
//! contraction/shrink coefficients (1, 2, 0.5, 0.5), tracks the best point
//! ever evaluated, and contains no randomness: identical inputs always produce
//! bit-identical output.

/// Outcome of a simplex run: the best point ever evaluated, its value, and
/// how many objective evaluations were spent.
#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    // Read by callers that care about the raw objective (and the tests);
    // registration re-scores candidates at full resolution instead.
    #[allow(dead_code)]
    pub value: f64,
    pub evaluations: usize,
}

struct Evaluator<'a, F> {
    f: &'a mut F,
    count: usize,
    max: usize,
    best_x: Vec<f64>,
    best_value: f64,
}

impl<'a, F: FnMut(&[f64]) -> f64> Evaluator<'a, F> {
    fn remaining(&self) -> usize {
        self.max - self.count
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        debug_assert!(self.count < self.max);
        self.count += 1;
        let v = (self.f)(x);
        // Strict improvement keeps the earliest point on exact ties.
        if v < self.best_value {
            self.best_value = v;
            self.best_x = x.to_vec();
        }
        v
    }
}

/// Minimize `f` starting from `start`, with an initial simplex formed by
/// stepping `steps[i]` along each coordinate axis. Stops when the spread of
/// objective values over the simplex falls below `tolerance` or when
/// `max_evaluations` objective calls have been made.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    start: &[f64],
    steps: &[f64],
    max_evaluations: usize,
    tolerance: f64,
) -> SimplexResult {
    let n = start.len();
    assert_eq!(steps.len(), n, "one step size per coordinate");
    assert!(n >= 1);
    let mut ev = Evaluator {
        f,
        count: 0,
        max: max_evaluations,
        best_x: start.to_vec(),
        best_value: f64::INFINITY,
    };

    // Initial simplex: the start point plus one axis-step vertex per dimension.
    let mut vertices: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = ev.eval(start);
    vertices.push((start.to_vec(), v0));
    for i in 0..n {
        if ev.remaining() == 0 {
            break;
        }
        let mut x = start.to_vec();
        x[i] += steps[i];
        let v = ev.eval(&x);
        vertices.push((x, v));
    }

    while vertices.len() == n + 1 {
        // Ascending by value; stable sort keeps exact ties deterministic.
        vertices.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("objective returned NaN"));
        let spread = vertices[n].1 - vertices[0].1;
        if spread < tolerance || ev.remaining() == 0 {
            break;
        }

        // Centroid of all vertices except the worst.
        let mut centroid = vec![0.0; n];
        for (x, _) in &vertices[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi;
            }
        }
        for c in &mut centroid {
            *c /= n as f64;
        }

        let worst = vertices[n].clone();
        let lerp = |from: &[f64], towards: &[f64], t: f64| -> Vec<f64> {
            from.iter()
                .zip(towards)
                .map(|(a, b)| a + t * (b - a))
                .collect()
        };

        // Reflection.
        let xr = lerp(&centroid, &worst.0, -1.0);
        let fr = ev.eval(&xr);

        if fr < vertices[0].1 {
            // Try to expand further along the same direction.
            if ev.remaining() > 0 {
                let xe = lerp(&centroid, &worst.0, -2.0);
                let fe = ev.eval(&xe);
                vertices[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else {
                vertices[n] = (xr, fr);
            }
        } else if fr < vertices[n - 1].1 {
            vertices[n] = (xr, fr);
        } else {
            // Contract: outside if the reflection at least beat the worst
            // vertex, inside otherwise.
            if ev.remaining() == 0 {
                break;
            }
            let (xc, fc) = if fr < worst.1 {
                let xc = lerp(&centroid, &xr, 0.5);
                let fc = ev.eval(&xc);
                (xc, fc)
            } else {
                let xc = lerp(&centroid, &worst.0, 0.5);
                let fc = ev.eval(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                vertices[n] = (xc, fc);
            } else {
                // Shrink everything towards the best vertex.
                let best = vertices[0].0.clone();
                for v in vertices[1..].iter_mut() {
                    if ev.remaining() == 0 {
                        break;
                    }
                    let x = lerp(&best, &v.0, 0.5);
                    let value = ev.eval(&x);
                    *v = (x, value);
                }
            }
        }
    }

    SimplexResult {
        x: ev.best_x,
        value: ev.best_value,
        evaluations: ev.count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_minimum_of_quadratic_bowl() {
        let mut f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 2.0).powi(2);
        let r = minimize(&mut f, &[0.0, 0.0], &[1.0, 1.0], 500, 1e-12);
        assert!((r.x[0] - 3.0).abs() < 1e-4, "x0 = {}", r.x[0]);
        assert!((r.x[1] + 2.0).abs() < 1e-4, "x1 = {}", r.x[1]);
        assert!(r.value < 1e-7);
    }

    #[test]
    fn walks_the_rosenbrock_valley() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(&mut f, &[-1.2, 1.0], &[0.5, 0.5], 2000, 1e-14);
        assert!((r.x[0] - 1.0).abs() < 1e-3, "x0 = {}", r.x[0]);
        assert!((r.x[1] - 1.0).abs() < 1e-3, "x1 = {}", r.x[1]);
    }

    #[test]
    fn never_returns_worse_than_start() {
        // A nasty objective full of plateaus.
        let mut f = |x: &[f64]| (x[0].floor().abs() + x[1].floor().abs()).min(7.0);
        let start = [2.5, -3.5];
        let start_value = f(&start);
        let r = minimize(&mut f, &start, &[1.0, 1.0], 100, 1e-9);
        assert!(r.value <= start_value);
    }

    #[test]
    fn respects_evaluation_budget() {
        let mut count = 0usize;
        let mut f = |x: &[f64]| {
            count += 1;
            x[0] * x[0]
        };
        let r = minimize(&mut f, &[10.0], &[1.0], 25, 0.0);
        assert_eq!(count, 25);
        assert_eq!(r.evaluations, 25);
    }

    #[test]
    fn budget_smaller_than_initial_simplex_still_returns_best_seen() {
        let mut f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let r = minimize(&mut f, &[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 2, 1e-9);
        assert_eq!(r.evaluations, 2);
        assert!(r.value.is_finite());
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut f =
                |x: &[f64]| (x[0] - 0.7).powi(2) + (x[1] * x[1] - 2.0).powi(2) + x[2].sin();
            minimize(&mut f, &[0.3, -1.0, 0.5], &[0.8, 0.8, 0.8], 300, 1e-10)
        };
        let a = run();
        let b = run();
        assert_eq!(a.x, b.x);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.evaluations, b.evaluations);
    }
}
