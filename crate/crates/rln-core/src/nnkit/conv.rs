//! The two gemm-backed layers: 3×3 same-padding convolution (via im2col) and
//! the fully-connected layer. Forward passes and exact analytic gradients.

use super::tensor::{gemm, Scalar, Tensor};
use crate::error::Error;
use crate::Result;

const K: usize = 3;
const KK: usize = K * K;

fn expect_shape(what: &str, expected: String, got: [usize; 4]) -> Error {
    Error::ShapeMismatch {
        expected: format!("{what}: {expected}"),
        got: format!("{got:?}"),
    }
}

fn check_conv_shapes<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let [n, cin, h, wd] = x.shape();
    let [cout, wcin, kh, kw] = w.shape();
    if wcin != cin || kh != K || kw != K {
        return Err(expect_shape(
            "conv2d weights",
            format!("[Cout, {cin}, {K}, {K}]"),
            w.shape(),
        ));
    }
    if b.shape() != [cout, 1, 1, 1] {
        return Err(expect_shape(
            "conv2d bias",
            format!("[{cout}, 1, 1, 1]"),
            b.shape(),
        ));
    }
    Ok((n, cin, cout, h, wd))
}

/// Writes the im2col matrix `[Cin·9 × H·W]` for sample `n` of `x`
/// (zero padding outside the frame).
fn im2col<T: Scalar>(x: &Tensor<T>, n: usize, cols: &mut [T]) {
    let [_, cin, h, w] = x.shape();
    let hw = h * w;
    debug_assert_eq!(cols.len(), cin * KK * hw);
    for c in 0..cin {
        for kh in 0..K {
            for kw in 0..K {
                let row = (c * KK + kh * K + kw) * hw;
                for oh in 0..h {
                    let ih = oh as isize + kh as isize - 1;
                    let base = row + oh * w;
                    if ih < 0 || ih >= h as isize {
                        cols[base..base + w].fill(T::ZERO);
                        continue;
                    }
                    let src_row = x.offset(n, c, ih as usize, 0);
                    for ow in 0..w {
                        let iw = ow as isize + kw as isize - 1;
                        cols[base + ow] = if iw < 0 || iw >= w as isize {
                            T::ZERO
                        } else {
                            x.data()[src_row + iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds an im2col-layout gradient back onto sample `n` of `gx`.
fn col2im_add<T: Scalar>(gcols: &[T], n: usize, gx: &mut Tensor<T>) {
    let [_, cin, h, w] = gx.shape();
    let hw = h * w;
    debug_assert_eq!(gcols.len(), cin * KK * hw);
    for c in 0..cin {
        for kh in 0..K {
            for kw in 0..K {
                let row = (c * KK + kh * K + kw) * hw;
                for oh in 0..h {
                    let ih = oh as isize + kh as isize - 1;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst_row = gx.offset(n, c, ih as usize, 0);
                    for ow in 0..w {
                        let iw = ow as isize + kw as isize - 1;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        gx.data_mut()[dst_row + iw as usize] += gcols[row + oh * w + ow];
                    }
                }
            }
        }
    }
}

/// 3×3 cross-correlation with stride 1 and zero padding preserving H×W.
///
/// `x`: `[N, Cin, H, W]`, `w`: `[Cout, Cin, 3, 3]`, `b`: `[Cout, 1, 1, 1]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, cin, cout, h, wd) = check_conv_shapes(x, w, b)?;
    let hw = h * wd;
    let mut y = Tensor::zeros([n, cout, h, wd]);
    let mut cols = vec![T::ZERO; cin * KK * hw];
    for s in 0..n {
        im2col(x, s, &mut cols);
        let y_start = y.offset(s, 0, 0, 0);
        gemm(
            cout,
            cin * KK,
            hw,
            T::ONE,
            w.data(),
            false,
            &cols,
            false,
            T::ZERO,
            &mut y.data_mut()[y_start..y_start + cout * hw],
        );
    }
    for s in 0..n {
        for o in 0..cout {
            let bias = b.data()[o];
            let start = y.offset(s, o, 0, 0);
            for v in &mut y.data_mut()[start..start + hw] {
                *v += bias;
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv2d`] w.r.t. input, weights, and bias given the
/// upstream gradient `gy` (shaped like the forward output).
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, cin, h, wd] = x.shape();
    let [cout, _, _, _] = w.shape();
    let bias_shape = Tensor::zeros([cout, 1, 1, 1]);
    check_conv_shapes(x, w, &bias_shape)?;
    if gy.shape() != [n, cout, h, wd] {
        return Err(expect_shape(
            "conv2d upstream gradient",
            format!("[{n}, {cout}, {h}, {wd}]"),
            gy.shape(),
        ));
    }
    let hw = h * wd;
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = bias_shape;
    let mut cols = vec![T::ZERO; cin * KK * hw];
    let mut gcols = vec![T::ZERO; cin * KK * hw];
    for s in 0..n {
        im2col(x, s, &mut cols);
        let gy_start = gy.offset(s, 0, 0, 0);
        let gy_s = &gy.data()[gy_start..gy_start + cout * hw];
        // gw[Cout × Cin·9] += gy_s[Cout × HW] · colsᵀ[HW × Cin·9]
        gemm(
            cout,
            hw,
            cin * KK,
            T::ONE,
            gy_s,
            false,
            &cols,
            true,
            T::ONE,
            gw.data_mut(),
        );
        // gcols[Cin·9 × HW] = wᵀ[Cin·9 × Cout] · gy_s[Cout × HW]
        gemm(
            cin * KK,
            cout,
            hw,
            T::ONE,
            w.data(),
            true,
            gy_s,
            false,
            T::ZERO,
            &mut gcols,
        );
        col2im_add(&gcols, s, &mut gx);
        for o in 0..cout {
            let mut sum = T::ZERO;
            for &g in &gy_s[o * hw..(o + 1) * hw] {
                sum += g;
            }
            gb.data_mut()[o] += sum;
        }
    }
    Ok((gx, gw, gb))
}

fn check_linear_shapes<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let [n, f, xh, xw] = x.shape();
    let [out, win, wh, ww] = w.shape();
    if xh != 1 || xw != 1 {
        return Err(expect_shape("linear input", format!("[N, F, 1, 1]"), x.shape()));
    }
    if win != f || wh != 1 || ww != 1 {
        return Err(expect_shape(
            "linear weights",
            format!("[out, {f}, 1, 1]"),
            w.shape(),
        ));
    }
    if b.shape() != [out, 1, 1, 1] {
        return Err(expect_shape("linear bias", format!("[{out}, 1, 1, 1]"), b.shape()));
    }
    Ok((n, f, out))
}

/// Fully-connected layer: `y[n, o] = Σ_f x[n, f]·w[o, f] + b[o]`.
///
/// `x`: `[N, F, 1, 1]`, `w`: `[out, F, 1, 1]`, `b`: `[out, 1, 1, 1]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f, out) = check_linear_shapes(x, w, b)?;
    let mut y = Tensor::zeros([n, out, 1, 1]);
    // y[N × out] = x[N × F] · wᵀ[F × out]
    gemm(
        n,
        f,
        out,
        T::ONE,
        x.data(),
        false,
        w.data(),
        true,
        T::ZERO,
        y.data_mut(),
    );
    for s in 0..n {
        for o in 0..out {
            *y.at_mut(s, o, 0, 0) += b.data()[o];
        }
    }
    Ok(y)
}

/// Gradients of [`linear`] w.r.t. input, weights, and bias.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [out, f, _, _] = w.shape();
    let bias_shape = Tensor::zeros([out, 1, 1, 1]);
    let (n, _, _) = check_linear_shapes(x, w, &bias_shape)?;
    if gy.shape() != [n, out, 1, 1] {
        return Err(expect_shape(
            "linear upstream gradient",
            format!("[{n}, {out}, 1, 1]"),
            gy.shape(),
        ));
    }
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = bias_shape;
    // gx[N × F] = gy[N × out] · w[out × F]
    gemm(
        n,
        out,
        f,
        T::ONE,
        gy.data(),
        false,
        w.data(),
        false,
        T::ZERO,
        gx.data_mut(),
    );
    // gw[out × F] = gyᵀ[out × N] · x[N × F]
    gemm(
        out,
        n,
        f,
        T::ONE,
        gy.data(),
        true,
        x.data(),
        false,
        T::ZERO,
        gw.data_mut(),
    );
    for s in 0..n {
        for o in 0..out {
            gb.data_mut()[o] += gy.at(s, o, 0, 0);
        }
    }
    Ok((gx, gw, gb))
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

    #[test]
    fn identity_centered_kernel_reproduces_input() {
        let x = tensor_from([1, 1, 3, 3], 1);
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        *w.at_mut(0, 0, 1, 1) = 1.0;
        let b = Tensor::zeros([1, 1, 1, 1]);
        let y = conv2d(&x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_input_yields_bias_only_output() {
        let x = Tensor::<f64>::zeros([2, 1, 4, 4]);
        let w = tensor_from([3, 1, 3, 3], 2);
        let mut b = Tensor::zeros([3, 1, 1, 1]);
        b.data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let y = conv2d(&x, &w, &b).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for h in 0..4 {
                    for wd in 0..4 {
                        assert_eq!(y.at(n, c, h, wd), b.data()[c]);
                    }
                }
            }
        }
        let zero_b = Tensor::zeros([3, 1, 1, 1]);
        let y0 = conv2d(&x, &w, &zero_b).unwrap();
        assert!(y0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orientation_is_cross_correlation_not_convolution() {
        // Kernel hot at (kh=0, kw=1): y[h, w] = x[h−1, w], i.e. the image
        // shifts down one row. A flipped-kernel convolution would shift up.
        let mut x = Tensor::<f64>::zeros([1, 1, 3, 3]);
        *x.at_mut(0, 0, 0, 0) = 1.0;
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        *w.at_mut(0, 0, 0, 1) = 1.0;
        let b = Tensor::zeros([1, 1, 1, 1]);
        let y = conv2d(&x, &w, &b).unwrap();
        assert_eq!(y.at(0, 0, 1, 0), 1.0);
        assert_eq!(y.at(0, 0, 0, 0), 0.0);
    }

    #[test]
    fn zero_padding_shows_in_border_sums() {
        // Ones image, ones kernel: center sees 9 taps, edges 6, corners 4.
        let x = Tensor::from_vec([1, 1, 3, 3], vec![1.0f64; 9]).unwrap();
        let w = Tensor::from_vec([1, 1, 3, 3], vec![1.0f64; 9]).unwrap();
        let b = Tensor::zeros([1, 1, 1, 1]);
        let y = conv2d(&x, &w, &b).unwrap();
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
    }

    #[test]
    fn conv2d_rejects_mismatched_shapes() {
        let x = Tensor::<f64>::zeros([1, 2, 4, 4]);
        let w_bad_cin = Tensor::<f64>::zeros([1, 3, 3, 3]);
        let w_bad_k = Tensor::<f64>::zeros([1, 2, 5, 5]);
        let w = Tensor::<f64>::zeros([1, 2, 3, 3]);
        let b_bad = Tensor::<f64>::zeros([2, 1, 1, 1]);
        let b = Tensor::<f64>::zeros([1, 1, 1, 1]);
        assert!(conv2d(&x, &w_bad_cin, &b).is_err());
        assert!(conv2d(&x, &w_bad_k, &b).is_err());
        assert!(conv2d(&x, &w, &b_bad).is_err());
        let gy_bad = Tensor::<f64>::zeros([1, 1, 5, 5]);
        assert!(conv2d_backward(&x, &w, &gy_bad).is_err());
    }

    /// Scalar objective for checks: project the layer output onto a fixed
    /// quasi-random tensor, so every output element contributes.
    fn conv_objective(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
        conv2d(x, w, b).unwrap().dot(r)
    }

    #[test]
    fn conv2d_gradients_match_finite_differences_on_five_shapes() {
        let shapes: [([usize; 4], usize); 5] = [
            ([2, 3, 8, 8], 4),
            ([1, 1, 5, 7], 2),
            ([3, 2, 4, 4], 1),
            ([1, 4, 6, 3], 3),
            ([2, 2, 3, 5], 2),
        ];
        for (i, &(xs, cout)) in shapes.iter().enumerate() {
            let salt = 10 + i as u64;
            let x = tensor_from(xs, salt);
            let w = tensor_from([cout, xs[1], 3, 3], salt + 100);
            let b = tensor_from([cout, 1, 1, 1], salt + 200);
            let r = tensor_from([xs[0], cout, xs[2], xs[3]], salt + 300);
            let (gx, gw, gb) = conv2d_backward(&x, &w, &r).unwrap();

            let mut xv = x.data().to_vec();
            let mut fx = |v: &[f64]| {
                let xt = Tensor::from_vec(xs, v.to_vec()).unwrap();
                conv_objective(&xt, &w, &b, &r)
            };
            let nx = central_difference(&mut fx, &mut xv, FD_STEP);
            assert!(
                max_relative_error(gx.data(), &nx) < FD_TOLERANCE,
                "input gradient mismatch on shape {xs:?}"
            );

            let mut wv = w.data().to_vec();
            let mut fw = |v: &[f64]| {
                let wt = Tensor::from_vec(w.shape(), v.to_vec()).unwrap();
                conv_objective(&x, &wt, &b, &r)
            };
            let nw = central_difference(&mut fw, &mut wv, FD_STEP);
            assert!(
                max_relative_error(gw.data(), &nw) < FD_TOLERANCE,
                "weight gradient mismatch on shape {xs:?}"
            );

            let mut bv = b.data().to_vec();
            let mut fb = |v: &[f64]| {
                let bt = Tensor::from_vec(b.shape(), v.to_vec()).unwrap();
                conv_objective(&x, &w, &bt, &r)
            };
            let nb = central_difference(&mut fb, &mut bv, FD_STEP);
            assert!(
                max_relative_error(gb.data(), &nb) < FD_TOLERANCE,
                "bias gradient mismatch on shape {xs:?}"
            );
        }
    }

    #[test]
    fn linear_matches_hand_computed_product() {
        // x = [[1, 2]], w = [[3, 4], [5, 6]], b = [0.5, -0.5]
        // y = [1·3+2·4+0.5, 1·5+2·6−0.5] = [11.5, 16.5]
        let x = Tensor::from_vec([1, 2, 1, 1], vec![1.0f64, 2.0]).unwrap();
        let w = Tensor::from_vec([2, 2, 1, 1], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec([2, 1, 1, 1], vec![0.5, -0.5]).unwrap();
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[11.5, 16.5]);
    }

    #[test]
    fn linear_rejects_mismatched_shapes() {
        let x = Tensor::<f64>::zeros([2, 3, 1, 1]);
        let w = Tensor::<f64>::zeros([4, 3, 1, 1]);
        let b = Tensor::<f64>::zeros([4, 1, 1, 1]);
        assert!(linear(&Tensor::zeros([2, 3, 2, 1]), &w, &b).is_err());
        assert!(linear(&x, &Tensor::zeros([4, 2, 1, 1]), &b).is_err());
        assert!(linear(&x, &w, &Tensor::zeros([3, 1, 1, 1])).is_err());
        assert!(linear_backward(&x, &w, &Tensor::zeros([2, 3, 1, 1])).is_err());
    }

    #[test]
    fn linear_gradients_match_finite_differences_on_five_shapes() {
        let shapes: [(usize, usize, usize); 5] =
            [(2, 3, 4), (1, 8, 2), (4, 2, 6), (3, 5, 5), (2, 16, 1)];
        for (i, &(n, f, out)) in shapes.iter().enumerate() {
            let salt = 40 + i as u64;
            let x = tensor_from([n, f, 1, 1], salt);
            let w = tensor_from([out, f, 1, 1], salt + 100);
            let b = tensor_from([out, 1, 1, 1], salt + 200);
            let r = tensor_from([n, out, 1, 1], salt + 300);
            let (gx, gw, gb) = linear_backward(&x, &w, &r).unwrap();

            let mut xv = x.data().to_vec();
            let mut fx = |v: &[f64]| {
                let xt = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
                linear(&xt, &w, &b).unwrap().dot(&r)
            };
            assert!(
                max_relative_error(gx.data(), &central_difference(&mut fx, &mut xv, FD_STEP))
                    < FD_TOLERANCE
            );
            let mut wv = w.data().to_vec();
            let mut fw = |v: &[f64]| {
                let wt = Tensor::from_vec(w.shape(), v.to_vec()).unwrap();
                linear(&x, &wt, &b).unwrap().dot(&r)
            };
            assert!(
                max_relative_error(gw.data(), &central_difference(&mut fw, &mut wv, FD_STEP))
                    < FD_TOLERANCE
            );
            let mut bv = b.data().to_vec();
            let mut fb = |v: &[f64]| {
                let bt = Tensor::from_vec(b.shape(), v.to_vec()).unwrap();
                linear(&x, &w, &bt).unwrap().dot(&r)
            };
            assert!(
                max_relative_error(gb.data(), &central_difference(&mut fb, &mut bv, FD_STEP))
                    < FD_TOLERANCE
            );
        }
    }
}
