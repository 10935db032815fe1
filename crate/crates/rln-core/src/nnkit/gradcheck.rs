//! Central finite-difference gradient checking at 64-bit precision.
//!
//! Every layer's analytic backward pass is verified against this oracle:
//! perturb each input coordinate by ±h, difference the scalar objective, and
//! compare with the analytic gradient under a guarded relative error.

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
///
/// `x` is restored exactly after each perturbation (the same bits), so `f`
/// may capture `x` by the slice passed to it.
pub fn central_difference<F>(f: &mut F, x: &mut [f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let saved = x[i];
        x[i] = saved + h;
        let fp = f(x);
        x[i] = saved - h;
        let fm = f(x);
        x[i] = saved;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Step size used by the kit's gradient checks.
pub const FD_STEP: f64 = 1e-4;

/// Step size for whole-network gradient checks. Perturbing an early layer
/// moves every downstream max-pool argmax and ReLU threshold, and the odds
/// of the finite-difference probe crossing one of those decision boundaries
/// scale with the step; 1e-6 keeps the probe inside the locally smooth
/// region while 64-bit arithmetic still leaves ~1e-10 absolute roundoff,
/// far below [`FD_TOLERANCE`].
pub const NETWORK_FD_STEP: f64 = 1e-6;

/// Relative-error tolerance the layers must meet at 64-bit precision.
pub const FD_TOLERANCE: f64 = 1e-4;

/// Maximum guarded relative error between analytic and numeric gradients:
/// `max_i |a_i − n_i| / max(|a_i| + |n_i|, 1e-3)`. The floor keeps
/// near-zero gradient entries from exploding the ratio while still
/// demanding ~1e-7 absolute agreement there.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "gradient length mismatch in check"
    );
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// [`max_relative_error`] over the live coordinates only: pairs where both
/// sides lie inside the `dead_zone` are skipped. Whole-network checks need
/// this for parameters whose true gradient is exactly zero (a conv bias
/// followed by instance norm is cancelled by the mean subtraction) — there
/// the two sides are pure roundoff around 0 and their ratio measures noise,
/// not gradient error.
pub fn max_relative_error_live(analytic: &[f64], numeric: &[f64], dead_zone: f64) -> f64 {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "gradient length mismatch in check"
    );
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| a.abs() >= dead_zone || n.abs() >= dead_zone)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Central-difference gradient at selected coordinates only — for
/// whole-network checks where differencing every parameter would be
/// prohibitively slow. Returns one numeric derivative per index, in order.
pub fn central_difference_at<F>(f: &mut F, x: &mut [f64], indices: &[usize], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(indices.len());
    for &i in indices {
        let saved = x[i];
        x[i] = saved + h;
        let fp = f(x);
        x[i] = saved - h;
        let fm = f(x);
        x[i] = saved;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Deterministic coordinate sample for [`central_difference_at`]: up to
/// `count` distinct indices into a buffer of length `len`, golden-ratio
/// strided so they spread across the buffer.
pub fn sample_indices(len: usize, count: usize, salt: u64) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let count = count.min(len);
    const PHI: f64 = 0.618_033_988_749_894_9;
    let mut picked = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::new();
    let mut k = 0u64;
    while picked.len() < count {
        let t = (PHI * (k as f64 + 0.5) + salt as f64 * 0.2137).fract();
        let idx = ((t * len as f64) as usize).min(len - 1);
        if seen.insert(idx) {
            picked.push(idx);
        }
        k += 1;
        if k > 64 * count as u64 + 64 {
            // Fallback for tiny buffers: fill linearly.
            for i in 0..len {
                if picked.len() == count {
                    break;
                }
                if seen.insert(i) {
                    picked.push(i);
                }
            }
        }
    }
    picked
}

/// Deterministic low-discrepancy values in (−1, 1) for seeding check inputs
/// without pulling an RNG into doctests: `frac(φ·k)·2 − 1` with the golden
/// ratio conjugate, offset so no value is exactly 0.
pub fn quasi_random(len: usize, salt: u64) -> Vec<f64> {
    const PHI: f64 = 0.618_033_988_749_894_9;
    (0..len)
        .map(|i| {
            let t = (PHI * (i as f64 + 1.37 + salt as f64 * 0.7311)).fract();
            2.0 * t - 1.0 + 1e-3
        })
        .collect()
}
