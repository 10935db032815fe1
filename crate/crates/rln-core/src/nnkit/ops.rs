//! Pointwise and normalization operations: ReLU, instance normalization,
//! nearest-neighbour 2× upsampling, and channel concatenation — each with an
//! exact analytic backward pass.

use super::tensor::{Scalar, Tensor};
use crate::error::Error;
use crate::Result;

/// Element-wise `max(0, x)`.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
    y
}

/// Gradient of [`relu`]: passes `gy` where the forward input was positive.
/// The kink at exactly zero takes the zero branch.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != gy.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("relu gradient shaped {:?}", x.shape()),
            got: format!("{:?}", gy.shape()),
        });
    }
    let mut gx = gy.clone();
    for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::ZERO {
            *g = T::ZERO;
        }
    }
    Ok(gx)
}

/// Epsilon added to the per-plane variance before the square root.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-sample, per-channel normalization to zero mean and unit variance over
/// the H×W plane; no learned affine.
pub fn instance_norm<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    let m = h * w;
    if m < 2 {
        return Err(Error::Degenerate(format!(
            "instance norm needs at least 2 pixels per plane, got {h}x{w}"
        )));
    }
    let eps = T::from_f64(INSTANCE_NORM_EPS);
    let m_t = T::from_f64(m as f64);
    let mut y = x.clone();
    for s in 0..n {
        for ch in 0..c {
            let start = x.offset(s, ch, 0, 0);
            let plane = &x.data()[start..start + m];
            let mut mean = T::ZERO;
            for &v in plane {
                mean += v;
            }
            mean = mean / m_t;
            let mut var = T::ZERO;
            for &v in plane {
                let d = v - mean;
                var += d * d;
            }
            var = var / m_t;
            let inv_std = T::ONE / (var + eps).sqrt();
            for v in &mut y.data_mut()[start..start + m] {
                *v = (*v - mean) * inv_std;
            }
        }
    }
    Ok(y)
}

/// Gradient of [`instance_norm`] w.r.t. its input.
pub fn instance_norm_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != gy.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("instance norm gradient shaped {:?}", x.shape()),
            got: format!("{:?}", gy.shape()),
        });
    }
    let [n, c, h, w] = x.shape();
    let m = h * w;
    if m < 2 {
        return Err(Error::Degenerate(format!(
            "instance norm needs at least 2 pixels per plane, got {h}x{w}"
        )));
    }
    let eps = T::from_f64(INSTANCE_NORM_EPS);
    let m_t = T::from_f64(m as f64);
    let mut gx = Tensor::zeros(x.shape());
    for s in 0..n {
        for ch in 0..c {
            let start = x.offset(s, ch, 0, 0);
            let plane = &x.data()[start..start + m];
            let gplane = &gy.data()[start..start + m];
            let mut mean = T::ZERO;
            for &v in plane {
                mean += v;
            }
            mean = mean / m_t;
            let mut var = T::ZERO;
            for &v in plane {
                let d = v - mean;
                var += d * d;
            }
            var = var / m_t;
            let inv_std = T::ONE / (var + eps).sqrt();
            // x̂ = (x − μ)·istd;  gx = istd·(gy − mean(gy) − x̂·mean(gy⊙x̂))
            let mut g_mean = T::ZERO;
            let mut gxhat_mean = T::ZERO;
            for (&v, &g) in plane.iter().zip(gplane) {
                g_mean += g;
                gxhat_mean += g * (v - mean) * inv_std;
            }
            g_mean = g_mean / m_t;
            gxhat_mean = gxhat_mean / m_t;
            for (i, (&v, &g)) in plane.iter().zip(gplane).enumerate() {
                let xhat = (v - mean) * inv_std;
                gx.data_mut()[start + i] = inv_std * (g - g_mean - xhat * gxhat_mean);
            }
        }
    }
    Ok(gx)
}

/// Nearest-neighbour 2× upsampling: `y[h, w] = x[h/2, w/2]`.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor::zeros([n, c, 2 * h, 2 * w]);
    for s in 0..n {
        for ch in 0..c {
            for oh in 0..2 * h {
                let src = x.offset(s, ch, oh / 2, 0);
                let dst = y.offset(s, ch, oh, 0);
                for ow in 0..2 * w {
                    y.data_mut()[dst + ow] = x.data()[src + ow / 2];
                }
            }
        }
    }
    y
}

/// Gradient of [`upsample2`]: each input cell accumulates its 2×2 block.
pub fn upsample2_backward<T: Scalar>(x_shape: [usize; 4], gy: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x_shape;
    if gy.shape() != [n, c, 2 * h, 2 * w] {
        return Err(Error::ShapeMismatch {
            expected: format!("upsample gradient shaped [{n}, {c}, {}, {}]", 2 * h, 2 * w),
            got: format!("{:?}", gy.shape()),
        });
    }
    let mut gx = Tensor::zeros(x_shape);
    for s in 0..n {
        for ch in 0..c {
            for oh in 0..2 * h {
                let src = gy.offset(s, ch, oh, 0);
                let dst = gx.offset(s, ch, oh / 2, 0);
                for ow in 0..2 * w {
                    gx.data_mut()[dst + ow / 2] += gy.data()[src + ow];
                }
            }
        }
    }
    Ok(gx)
}

/// Concatenates along the channel axis: `[N, Ca, H, W] ++ [N, Cb, H, W]`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [na, ca, ha, wa] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if na != nb || ha != hb || wa != wb {
        return Err(Error::ShapeMismatch {
            expected: format!("concat partner shaped [{na}, *, {ha}, {wa}]"),
            got: format!("{:?}", b.shape()),
        });
    }
    let mut y = Tensor::zeros([na, ca + cb, ha, wa]);
    let plane = ha * wa;
    for s in 0..na {
        for ch in 0..ca {
            let src = a.offset(s, ch, 0, 0);
            let dst = y.offset(s, ch, 0, 0);
            y.data_mut()[dst..dst + plane].copy_from_slice(&a.data()[src..src + plane]);
        }
        for ch in 0..cb {
            let src = b.offset(s, ch, 0, 0);
            let dst = y.offset(s, ca + ch, 0, 0);
            y.data_mut()[dst..dst + plane].copy_from_slice(&b.data()[src..src + plane]);
        }
    }
    Ok(y)
}

/// Splits a concat gradient back into the two input gradients.
pub fn concat_channels_backward<T: Scalar>(
    ca: usize,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = gy.shape();
    if ca >= c {
        return Err(Error::ShapeMismatch {
            expected: format!("first-part channels < {c}"),
            got: format!("{ca}"),
        });
    }
    let cb = c - ca;
    let mut ga = Tensor::zeros([n, ca, h, w]);
    let mut gb = Tensor::zeros([n, cb, h, w]);
    let plane = h * w;
    for s in 0..n {
        for ch in 0..ca {
            let src = gy.offset(s, ch, 0, 0);
            let dst = ga.offset(s, ch, 0, 0);
            ga.data_mut()[dst..dst + plane].copy_from_slice(&gy.data()[src..src + plane]);
        }
        for ch in 0..cb {
            let src = gy.offset(s, ca + ch, 0, 0);
            let dst = gb.offset(s, ch, 0, 0);
            gb.data_mut()[dst..dst + plane].copy_from_slice(&gy.data()[src..src + plane]);
        }
    }
    Ok((ga, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::gradcheck::{
        central_difference, max_relative_error, quasi_random, FD_STEP, FD_TOLERANCE,
    };

    fn tensor_from(shape: [usize; 4], salt: u64) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::from_vec(shape, quasi_random(len, salt)).unwrap()
    }

    /// Quasi-random values pushed away from zero so ReLU's kink does not sit
    /// inside the finite-difference bracket.
    fn tensor_from_kink_safe(shape: [usize; 4], salt: u64) -> Tensor<f64> {
        let mut t = tensor_from(shape, salt);
        for v in t.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        t
    }

    #[test]
    fn relu_clamps_negatives_only() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn instance_norm_zeroes_constant_channel() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![3.5f64; 4]).unwrap();
        let y = instance_norm(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn instance_norm_standardizes_each_plane() {
        let x = tensor_from([2, 3, 5, 4], 7);
        let y = instance_norm(&x).unwrap();
        let m = 20.0;
        for n in 0..2 {
            for c in 0..3 {
                let start = y.offset(n, c, 0, 0);
                let plane = &y.data()[start..start + 20];
                let mean: f64 = plane.iter().sum::<f64>() / m;
                let var: f64 = plane.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / m;
                assert!(mean.abs() <= 1e-6, "plane mean {mean}");
                assert!((var - 1.0).abs() < 1e-4, "plane variance {var}");
            }
        }
    }

    #[test]
    fn instance_norm_rejects_single_pixel_plane() {
        let x = Tensor::<f64>::zeros([1, 2, 1, 1]);
        assert!(matches!(instance_norm(&x), Err(Error::Degenerate(_))));
        assert!(instance_norm_backward(&x, &x.clone()).is_err());
    }

    #[test]
    fn relu_gradient_matches_finite_differences_on_five_shapes() {
        let shapes = [[1, 1, 4, 4], [2, 3, 2, 2], [1, 2, 5, 3], [3, 1, 1, 7], [2, 2, 3, 3]];
        for (i, &xs) in shapes.iter().enumerate() {
            let salt = 60 + i as u64;
            let x = tensor_from_kink_safe(xs, salt);
            let r = tensor_from(xs, salt + 100);
            let gx = relu_backward(&x, &r).unwrap();
            let mut xv = x.data().to_vec();
            let mut f = |v: &[f64]| {
                let xt = Tensor::from_vec(xs, v.to_vec()).unwrap();
                relu(&xt).dot(&r)
            };
            let nx = central_difference(&mut f, &mut xv, FD_STEP);
            assert!(max_relative_error(gx.data(), &nx) < FD_TOLERANCE, "shape {xs:?}");
        }
    }

    #[test]
    fn instance_norm_gradient_matches_finite_differences_on_five_shapes() {
        let shapes = [[2, 3, 8, 8], [1, 1, 2, 3], [2, 2, 4, 5], [1, 4, 3, 3], [3, 1, 6, 2]];
        for (i, &xs) in shapes.iter().enumerate() {
            let salt = 80 + i as u64;
            let x = tensor_from(xs, salt);
            let r = tensor_from(xs, salt + 100);
            let gx = instance_norm_backward(&x, &r).unwrap();
            let mut xv = x.data().to_vec();
            let mut f = |v: &[f64]| {
                let xt = Tensor::from_vec(xs, v.to_vec()).unwrap();
                instance_norm(&xt).unwrap().dot(&r)
            };
            let nx = central_difference(&mut f, &mut xv, FD_STEP);
            assert!(max_relative_error(gx.data(), &nx) < FD_TOLERANCE, "shape {xs:?}");
        }
    }

    #[test]
    fn upsample2_repeats_each_cell_in_a_2x2_block() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample2(&x);
        assert_eq!(y.shape(), [1, 1, 4, 4]);
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn upsample2_gradient_matches_finite_differences_on_five_shapes() {
        let shapes = [[1, 1, 2, 2], [2, 2, 3, 1], [1, 3, 1, 4], [2, 1, 2, 3], [1, 2, 4, 2]];
        for (i, &xs) in shapes.iter().enumerate() {
            let salt = 110 + i as u64;
            let x = tensor_from(xs, salt);
            let r = tensor_from([xs[0], xs[1], 2 * xs[2], 2 * xs[3]], salt + 100);
            let gx = upsample2_backward(xs, &r).unwrap();
            let mut xv = x.data().to_vec();
            let mut f = |v: &[f64]| {
                let xt = Tensor::from_vec(xs, v.to_vec()).unwrap();
                upsample2(&xt).dot(&r)
            };
            let nx = central_difference(&mut f, &mut xv, FD_STEP);
            assert!(max_relative_error(gx.data(), &nx) < FD_TOLERANCE, "shape {xs:?}");
        }
    }

    #[test]
    fn concat_stacks_channels_and_backward_splits_them() {
        let a = tensor_from([2, 2, 3, 3], 1);
        let b = tensor_from([2, 3, 3, 3], 2);
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.shape(), [2, 5, 3, 3]);
        assert_eq!(y.at(1, 0, 2, 2), a.at(1, 0, 2, 2));
        assert_eq!(y.at(1, 2, 0, 1), b.at(1, 0, 0, 1));
        let (ga, gb) = concat_channels_backward(2, &y).unwrap();
        assert_eq!(ga, a);
        assert_eq!(gb, b);
    }

    #[test]
    fn concat_rejects_mismatched_planes() {
        let a = Tensor::<f64>::zeros([1, 2, 3, 3]);
        let b = Tensor::<f64>::zeros([1, 2, 4, 3]);
        assert!(concat_channels(&a, &b).is_err());
        assert!(concat_channels_backward(5, &a).is_err());
    }
}
