//! Training losses: the segmentation loss (pixel-mean softmax cross-entropy
//! plus soft-Dice, summed) and the joint piecewise smooth-L1 used for
//! centroid offset regression (with the conventional per-coordinate form
//! selectable for comparison).

use super::tensor::{Scalar, Tensor};
use crate::error::Error;
use crate::Result;

/// Epsilon guarding the soft-Dice ratio.
pub const DICE_EPS: f64 = 1e-5;

/// Breakdown of [`seg_loss`]: `total = cross_entropy + dice`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SegLoss {
    pub total: f64,
    pub cross_entropy: f64,
    pub dice: f64,
}

/// Segmentation loss over class logits `[N, C, H, W]` and integer labels
/// (`target[n·H·W + h·W + w] < C`).
///
/// Cross-entropy is averaged over all pixels; the Dice term is
/// `1 − mean_c (2·Σ p_c·t_c + ε) / (Σ p_c + Σ t_c + ε)` with the sums taken
/// over every pixel of the batch; the two terms are summed. Returns the loss
/// breakdown and the gradient w.r.t. the logits.
pub fn seg_loss<T: Scalar>(logits: &Tensor<T>, target: &[u8]) -> Result<(SegLoss, Tensor<T>)> {
    let [n, c, h, w] = logits.shape();
    let pixels = n * h * w;
    if target.len() != pixels {
        return Err(Error::ShapeMismatch {
            expected: format!("{pixels} target labels for logits {:?}", logits.shape()),
            got: format!("{} labels", target.len()),
        });
    }
    if let Some(&bad) = target.iter().find(|&&t| (t as usize) >= c) {
        return Err(Error::LabelOutOfRange {
            value: bad,
            file: None,
        });
    }

    let plane = h * w;
    // Softmax probabilities, stored in the gradient tensor's layout.
    let mut probs = Tensor::<T>::zeros(logits.shape());
    let mut ce_sum = 0.0f64;
    // Per-class Dice accumulators over the whole batch.
    let mut inter = vec![0.0f64; c]; // Σ p_c·t_c
    let mut p_sum = vec![0.0f64; c]; // Σ p_c
    let mut t_sum = vec![0.0f64; c]; // Σ t_c
    for s in 0..n {
        for p in 0..plane {
            let label = target[s * plane + p] as usize;
            let mut max = f64::NEG_INFINITY;
            for ch in 0..c {
                max = max.max(logits.data()[logits.offset(s, ch, 0, 0) + p].to_f64());
            }
            let mut denom = 0.0f64;
            for ch in 0..c {
                let e = (logits.data()[logits.offset(s, ch, 0, 0) + p].to_f64() - max).exp();
                let off = probs.offset(s, ch, 0, 0) + p;
                probs.data_mut()[off] = T::from_f64(e);
                denom += e;
            }
            for ch in 0..c {
                let off = probs.offset(s, ch, 0, 0) + p;
                let prob = probs.data()[off].to_f64() / denom;
                probs.data_mut()[off] = T::from_f64(prob);
                p_sum[ch] += prob;
                if ch == label {
                    ce_sum -= prob.max(f64::MIN_POSITIVE).ln();
                    inter[ch] += prob;
                    t_sum[ch] += 1.0;
                }
            }
        }
    }
    let ce = ce_sum / pixels as f64;

    let mut dice_mean = 0.0f64;
    let mut num = vec![0.0f64; c];
    let mut den = vec![0.0f64; c];
    for ch in 0..c {
        num[ch] = 2.0 * inter[ch] + DICE_EPS;
        den[ch] = p_sum[ch] + t_sum[ch] + DICE_EPS;
        dice_mean += num[ch] / den[ch];
    }
    dice_mean /= c as f64;
    let dice_loss = 1.0 - dice_mean;

    // Gradient w.r.t. logits: CE contributes (p − onehot)/pixels directly;
    // the Dice term's ∂L/∂p chains through the softmax Jacobian.
    let inv_pixels = 1.0 / pixels as f64;
    let mut grad = Tensor::<T>::zeros(logits.shape());
    let inv_c = 1.0 / c as f64;
    for s in 0..n {
        for p in 0..plane {
            let label = target[s * plane + p] as usize;
            // dL_dice/dp_c = −(1/C)·(2·t_c·den_c − num_c)/den_c²
            let mut dot = 0.0f64; // Σ_c g_c·p_c for the softmax Jacobian
            let mut g = [0.0f64; 16];
            debug_assert!(c <= 16, "seg_loss supports up to 16 classes");
            for ch in 0..c {
                let t_ch = if ch == label { 1.0 } else { 0.0 };
                let gp = -inv_c * (2.0 * t_ch * den[ch] - num[ch]) / (den[ch] * den[ch]);
                let prob = probs.data()[probs.offset(s, ch, 0, 0) + p].to_f64();
                g[ch] = gp;
                dot += gp * prob;
            }
            for ch in 0..c {
                let off = grad.offset(s, ch, 0, 0) + p;
                let prob = probs.data()[probs.offset(s, ch, 0, 0) + p].to_f64();
                let onehot = if ch == label { 1.0 } else { 0.0 };
                let ce_part = (prob - onehot) * inv_pixels;
                let dice_part = prob * (g[ch] - dot);
                grad.data_mut()[off] = T::from_f64(ce_part + dice_part);
            }
        }
    }

    Ok((
        SegLoss {
            total: ce + dice_loss,
            cross_entropy: ce,
            dice: dice_loss,
        },
        grad,
    ))
}

/// Which smooth-L1 variant to evaluate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SmoothL1Form {
    /// Joint piecewise form: quadratic in (Δx, Δy) while |Δx|+|Δy| < 2β,
    /// otherwise |Δx|+|Δy| − β. This is the default regression loss.
    #[default]
    Joint,
    /// Conventional per-coordinate smooth-L1, summed over the two
    /// coordinates.
    PerCoordinate,
}

/// Joint piecewise smooth-L1 on a coordinate offset:
///
/// `L = (Δx² + Δy²)/(2β)` when `|Δx| + |Δy| < 2β` (strictly), else
/// `|Δx| + |Δy| − β`. Returns the value and `(∂L/∂Δx, ∂L/∂Δy)`; the
/// gradient always follows the branch that produced the value, so on the
/// boundary (which the strict `<` assigns to the linear branch) it is the
/// sign vector.
pub fn smooth_l1<T: Scalar>(dx: T, dy: T, beta: T) -> (T, [T; 2]) {
    let l1 = dx.abs() + dy.abs();
    let two_beta = beta + beta;
    if l1 < two_beta {
        let value = (dx * dx + dy * dy) / two_beta;
        (value, [dx / beta, dy / beta])
    } else {
        (l1 - beta, [sign(dx), sign(dy)])
    }
}

/// Conventional per-coordinate smooth-L1 summed over the two coordinates:
/// each coordinate contributes `t²/(2β)` when `|t| < β`, else `|t| − β/2`.
pub fn smooth_l1_per_coordinate<T: Scalar>(dx: T, dy: T, beta: T) -> (T, [T; 2]) {
    let half = T::from_f64(0.5);
    let one_coord = |t: T| -> (T, T) {
        if t.abs() < beta {
            ((t * t) / (beta + beta), t / beta)
        } else {
            (t.abs() - beta * half, sign(t))
        }
    };
    let (vx, gx) = one_coord(dx);
    let (vy, gy) = one_coord(dy);
    (vx + vy, [gx, gy])
}

/// Evaluates the selected [`SmoothL1Form`].
pub fn smooth_l1_form<T: Scalar>(form: SmoothL1Form, dx: T, dy: T, beta: T) -> (T, [T; 2]) {
    match form {
        SmoothL1Form::Joint => smooth_l1(dx, dy, beta),
        SmoothL1Form::PerCoordinate => smooth_l1_per_coordinate(dx, dy, beta),
    }
}

fn sign<T: Scalar>(t: T) -> T {
    if t > T::ZERO {
        T::ONE
    } else if t < T::ZERO {
        -T::ONE
    } else {
        T::ZERO
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::gradcheck::{
        central_difference, max_relative_error, quasi_random, FD_STEP, FD_TOLERANCE,
    };

    fn logits_from(shape: [usize; 4], salt: u64) -> Tensor<f64> {
        let len = shape.iter().product();
        let data = quasi_random(len, salt).iter().map(|v| 2.0 * v).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    fn labels_for(shape: [usize; 4], salt: u64) -> Vec<u8> {
        let pixels = shape[0] * shape[2] * shape[3];
        quasi_random(pixels, salt)
            .iter()
            .map(|v| (((v + 1.1) * 977.0) as usize % shape[1]) as u8)
            .collect()
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        // ±20 logits: +20 on the true class, −20 elsewhere.
        let shape = [1, 4, 4, 4];
        let target = labels_for(shape, 3);
        let mut logits = Tensor::<f64>::zeros(shape);
        for p in 0..16 {
            for c in 0..4 {
                let v = if c == target[p] as usize { 20.0 } else { -20.0 };
                let off = logits.offset(0, c, 0, 0) + p;
                logits.data_mut()[off] = v;
            }
        }
        let (loss, _) = seg_loss(&logits, &target).unwrap();
        assert!(loss.total < 0.01, "loss {loss:?}");
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_4() {
        let shape = [2, 4, 3, 5];
        let target = labels_for(shape, 5);
        let logits = Tensor::<f64>::zeros(shape);
        let (loss, _) = seg_loss(&logits, &target).unwrap();
        assert!((loss.cross_entropy - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn seg_loss_rejects_bad_targets() {
        let logits = Tensor::<f64>::zeros([1, 4, 2, 2]);
        assert!(matches!(
            seg_loss(&logits, &[0u8; 3]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            seg_loss(&logits, &[0, 1, 2, 4]),
            Err(Error::LabelOutOfRange { value: 4, .. })
        ));
    }

    #[test]
    fn seg_loss_gradient_matches_finite_differences_on_five_shapes() {
        let shapes = [[1, 4, 3, 3], [2, 4, 2, 2], [1, 2, 4, 5], [3, 3, 2, 3], [1, 4, 1, 8]];
        for (i, &xs) in shapes.iter().enumerate() {
            let salt = 170 + i as u64;
            let logits = logits_from(xs, salt);
            let target = labels_for(xs, salt + 50);
            let (_, grad) = seg_loss(&logits, &target).unwrap();
            let mut lv = logits.data().to_vec();
            let mut f = |v: &[f64]| {
                let lt = Tensor::from_vec(xs, v.to_vec()).unwrap();
                seg_loss(&lt, &target).unwrap().0.total
            };
            let numeric = central_difference(&mut f, &mut lv, FD_STEP);
            assert!(
                max_relative_error(grad.data(), &numeric) < FD_TOLERANCE,
                "shape {xs:?}"
            );
        }
    }

    #[test]
    fn seg_loss_total_is_ce_plus_dice() {
        let shape = [2, 4, 4, 4];
        let logits = logits_from(shape, 21);
        let target = labels_for(shape, 22);
        let (loss, _) = seg_loss(&logits, &target).unwrap();
        assert_eq!(loss.total, loss.cross_entropy + loss.dice);
        assert!(loss.dice >= 0.0 && loss.dice <= 1.0 + DICE_EPS);
    }

    /// The 12-case table spanning both branches of the joint piecewise form
    /// (β = 1). Every expected value is exactly representable, so equality
    /// is exact.
    const JOINT_TABLE: [(f64, f64, f64); 12] = [
        // quadratic branch: |Δx|+|Δy| < 2
        (0.0, 0.0, 0.0),
        (0.5, 0.5, 0.25),
        (-0.5, 0.5, 0.25),
        (0.75, -0.25, 0.3125),
        (0.0, 1.5, 1.125),
        (1.25, 0.25, 0.8125),
        // boundary |Δx|+|Δy| = 2: strict `<` selects the linear branch
        (2.0, 0.0, 1.0),
        (1.0, 1.0, 1.0),
        (1.5, 0.5, 1.0),
        // linear branch: |Δx|+|Δy| > 2
        (3.0, 1.0, 3.0),
        (2.0, 2.0, 3.0),
        (-3.0, -4.0, 6.0),
    ];

    #[test]
    fn joint_form_matches_the_branch_table_exactly() {
        for &(dx, dy, expected) in &JOINT_TABLE {
            let (v, _) = smooth_l1(dx, dy, 1.0);
            assert_eq!(v, expected, "smooth_l1({dx}, {dy})");
        }
    }

    #[test]
    fn boundary_point_takes_the_linear_branch_value_and_gradient() {
        // (2,0): the quadratic branch would give 2; the strict `<` rule
        // yields the linear branch's 1 and its sign-vector gradient.
        let (v, g) = smooth_l1(2.0f64, 0.0, 1.0);
        assert_eq!(v, 1.0);
        assert_eq!(g, [1.0, 0.0]);
        // Diagonal boundary (1,1): both branches agree on the value.
        let (v_diag, g_diag) = smooth_l1(1.0f64, 1.0, 1.0);
        assert_eq!(v_diag, 1.0);
        assert_eq!(g_diag, [1.0, 1.0]);
    }

    #[test]
    fn joint_gradients_match_finite_differences_inside_each_branch() {
        for &(dx, dy) in &[(0.3f64, -0.6), (0.9, 0.8), (2.5, -1.0), (-3.0, -4.0), (0.0, 2.5)] {
            let (_, g) = smooth_l1(dx, dy, 1.0);
            let mut x = vec![dx, dy];
            let mut f = |v: &[f64]| smooth_l1(v[0], v[1], 1.0).0;
            let n = central_difference(&mut f, &mut x, FD_STEP);
            assert!(max_relative_error(&g, &n) < FD_TOLERANCE, "at ({dx}, {dy})");
        }
    }

    #[test]
    fn per_coordinate_form_differs_from_joint_off_diagonal() {
        // Conventional smooth-L1 at (2,0), β=1: |2|−0.5 + 0 = 1.5 ≠ 1.
        let (v, g) = smooth_l1_per_coordinate(2.0f64, 0.0, 1.0);
        assert_eq!(v, 1.5);
        assert_eq!(g, [1.0, 0.0]);
        // Inside |t| < β both coordinates are quadratic: t²/2β each.
        let (v2, g2) = smooth_l1_per_coordinate(0.5f64, -0.5, 1.0);
        assert_eq!(v2, 0.25);
        assert_eq!(g2, [0.5, -0.5]);
        // Dispatcher selects forms.
        assert_eq!(smooth_l1_form(SmoothL1Form::Joint, 2.0f64, 0.0, 1.0).0, 1.0);
        assert_eq!(
            smooth_l1_form(SmoothL1Form::PerCoordinate, 2.0f64, 0.0, 1.0).0,
            1.5
        );
    }

    #[test]
    fn per_coordinate_gradients_match_finite_differences() {
        for &(dx, dy) in &[(0.4f64, -0.3), (2.0, 0.25), (-1.5, -2.0), (0.6, 1.4)] {
            let (_, g) = smooth_l1_per_coordinate(dx, dy, 1.0);
            let mut x = vec![dx, dy];
            let mut f = |v: &[f64]| smooth_l1_per_coordinate(v[0], v[1], 1.0).0;
            let n = central_difference(&mut f, &mut x, FD_STEP);
            assert!(max_relative_error(&g, &n) < FD_TOLERANCE, "at ({dx}, {dy})");
        }
    }

    #[test]
    fn smooth_l1_works_at_f32_precision_too() {
        let (v, g) = smooth_l1(0.5f32, 0.5, 1.0);
        assert_eq!(v, 0.25f32);
        assert_eq!(g, [0.5f32, 0.5]);
    }
}
