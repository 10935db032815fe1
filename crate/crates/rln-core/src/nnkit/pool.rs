//! Max pooling: the fixed stride-2 downsampler and the adaptive variant that
//! maps any plane of at least `grid`×`grid` onto a fixed `grid`×`grid`
//! output (the re-scaling step that lets differently sized paths concatenate).

use super::tensor::{Scalar, Tensor};
use crate::error::Error;
use crate::Result;

/// Forward bookkeeping for a pooling op: which input element won each output
/// cell, so the backward pass can route gradients.
#[derive(Clone, Debug)]
pub struct PoolIndices {
    argmax: Vec<usize>,
    input_shape: [usize; 4],
    output_shape: [usize; 4],
}

impl PoolIndices {
    pub fn output_shape(&self) -> [usize; 4] {
        self.output_shape
    }
}

/// 2×2 max pooling with stride 2 (output dims are the floor halves).
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let [n, c, h, w] = x.shape();
    if h < 2 || w < 2 {
        return Err(Error::ShapeMismatch {
            expected: "max pool input with H ≥ 2 and W ≥ 2".to_string(),
            got: format!("{:?}", x.shape()),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = vec![0usize; y.len()];
    for s in 0..n {
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_at = 0usize;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let idx = x.offset(s, ch, 2 * i + di, 2 * j + dj);
                            let v = x.data()[idx];
                            if v > best {
                                best = v;
                                best_at = idx;
                            }
                        }
                    }
                    let out = y.offset(s, ch, i, j);
                    y.data_mut()[out] = best;
                    argmax[out] = best_at;
                }
            }
        }
    }
    Ok((
        y,
        PoolIndices {
            argmax,
            input_shape: x.shape(),
            output_shape: [n, c, oh, ow],
        },
    ))
}

/// Adaptive max pooling onto a `grid`×`grid` output. The plane is
/// partitioned into near-equal bins `[⌊i·H/g⌋, ⌊(i+1)·H/g⌋)` — disjoint and
/// covering — and each output cell takes its bin's maximum.
pub fn adaptive_max_pool<T: Scalar>(x: &Tensor<T>, grid: usize) -> Result<(Tensor<T>, PoolIndices)> {
    let [n, c, h, w] = x.shape();
    if grid == 0 || h < grid || w < grid {
        return Err(Error::ShapeMismatch {
            expected: format!("adaptive pool input at least {grid}x{grid}"),
            got: format!("{:?}", x.shape()),
        });
    }
    let mut y = Tensor::zeros([n, c, grid, grid]);
    let mut argmax = vec![0usize; y.len()];
    for s in 0..n {
        for ch in 0..c {
            for i in 0..grid {
                let h0 = i * h / grid;
                let h1 = (i + 1) * h / grid;
                for j in 0..grid {
                    let w0 = j * w / grid;
                    let w1 = (j + 1) * w / grid;
                    let mut best = T::neg_infinity();
                    let mut best_at = 0usize;
                    for ih in h0..h1 {
                        for iw in w0..w1 {
                            let idx = x.offset(s, ch, ih, iw);
                            let v = x.data()[idx];
                            if v > best {
                                best = v;
                                best_at = idx;
                            }
                        }
                    }
                    let out = y.offset(s, ch, i, j);
                    y.data_mut()[out] = best;
                    argmax[out] = best_at;
                }
            }
        }
    }
    Ok((
        y,
        PoolIndices {
            argmax,
            input_shape: x.shape(),
            output_shape: [n, c, grid, grid],
        },
    ))
}

/// Backward pass shared by both pooling ops: each output gradient flows to
/// the input element that won its cell.
pub fn pool_backward<T: Scalar>(indices: &PoolIndices, gy: &Tensor<T>) -> Result<Tensor<T>> {
    if gy.shape() != indices.output_shape {
        return Err(Error::ShapeMismatch {
            expected: format!("pool gradient shaped {:?}", indices.output_shape),
            got: format!("{:?}", gy.shape()),
        });
    }
    let mut gx = Tensor::zeros(indices.input_shape);
    for (out, &src) in indices.argmax.iter().enumerate() {
        gx.data_mut()[src] += gy.data()[out];
    }
    Ok(gx)
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
    fn max_pool2_takes_block_maxima() {
        let x = Tensor::from_vec(
            [1, 1, 4, 4],
            vec![
                1.0f64, 2.0, 5.0, 6.0, //
                3.0, 4.0, 7.0, 8.0, //
                -1.0, -2.0, 0.5, 0.25, //
                -3.0, -4.0, 0.125, 0.0,
            ],
        )
        .unwrap();
        let (y, _) = max_pool2(&x).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0, 8.0, -1.0, 0.5]);
    }

    #[test]
    fn max_pool2_floors_odd_dims_and_rejects_tiny_input() {
        let x = tensor_from([1, 1, 5, 3], 5);
        let (y, _) = max_pool2(&x).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 1]);
        assert!(max_pool2(&Tensor::<f64>::zeros([1, 1, 1, 4])).is_err());
    }

    #[test]
    fn adaptive_pool_on_8x8_equals_one_stride2_pool_to_4x4() {
        let x = tensor_from([2, 3, 8, 8], 9);
        let (adaptive, _) = adaptive_max_pool(&x, 4).unwrap();
        // 8/4 = 2 exactly, so bins are the 2×2 blocks of a stride-2 pool
        // applied to the 8×8 plane... which is a 4×4 output directly.
        let (pooled_once, _) = max_pool2(&x).unwrap();
        assert_eq!(pooled_once.shape(), [2, 3, 4, 4]);
        assert_eq!(adaptive, pooled_once);
    }

    #[test]
    fn adaptive_pool_bins_partition_uneven_planes() {
        // 6→4 rows split as [0,1), [1,3), [3,4), [4,6): sizes 1,2,1,2.
        let x = tensor_from([1, 1, 6, 6], 11);
        let (y, _) = adaptive_max_pool(&x, 4).unwrap();
        assert_eq!(y.shape(), [1, 1, 4, 4]);
        let max_in = |h0: usize, h1: usize, w0: usize, w1: usize| {
            let mut best = f64::NEG_INFINITY;
            for h in h0..h1 {
                for w in w0..w1 {
                    best = best.max(x.at(0, 0, h, w));
                }
            }
            best
        };
        assert_eq!(y.at(0, 0, 0, 0), max_in(0, 1, 0, 1));
        assert_eq!(y.at(0, 0, 1, 1), max_in(1, 3, 1, 3));
        assert_eq!(y.at(0, 0, 3, 2), max_in(4, 6, 3, 4));
        assert_eq!(y.at(0, 0, 3, 3), max_in(4, 6, 4, 6));
    }

    #[test]
    fn adaptive_pool_rejects_inputs_smaller_than_the_grid() {
        let x = Tensor::<f64>::zeros([1, 1, 3, 5]);
        assert!(adaptive_max_pool(&x, 4).is_err());
        assert!(adaptive_max_pool(&x, 0).is_err());
    }

    #[test]
    fn pool_backward_routes_gradient_to_the_argmax() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0f64, 4.0, 2.0, 3.0]).unwrap();
        let (_, idx) = max_pool2(&x).unwrap();
        let gy = Tensor::from_vec([1, 1, 1, 1], vec![5.0f64]).unwrap();
        let gx = pool_backward(&idx, &gy).unwrap();
        assert_eq!(gx.data(), &[0.0, 5.0, 0.0, 0.0]);
        let gy_bad = Tensor::<f64>::zeros([1, 1, 2, 2]);
        assert!(pool_backward(&idx, &gy_bad).is_err());
    }

    #[test]
    fn max_pool2_gradient_matches_finite_differences_on_five_shapes() {
        let shapes = [[1, 1, 4, 4], [2, 2, 6, 6], [1, 3, 2, 8], [2, 1, 5, 4], [1, 2, 8, 2]];
        for (i, &xs) in shapes.iter().enumerate() {
            let salt = 130 + i as u64;
            let x = tensor_from(xs, salt);
            let (_, idx) = max_pool2(&x).unwrap();
            let r = tensor_from(idx.output_shape(), salt + 100);
            let gx = pool_backward(&idx, &r).unwrap();
            let mut xv = x.data().to_vec();
            let mut f = |v: &[f64]| {
                let xt = Tensor::from_vec(xs, v.to_vec()).unwrap();
                max_pool2(&xt).unwrap().0.dot(&r)
            };
            let nx = central_difference(&mut f, &mut xv, FD_STEP);
            assert!(max_relative_error(gx.data(), &nx) < FD_TOLERANCE, "shape {xs:?}");
        }
    }

    #[test]
    fn adaptive_pool_gradient_matches_finite_differences_on_five_shapes() {
        let shapes = [[1, 1, 8, 8], [2, 2, 6, 6], [1, 3, 4, 9], [2, 1, 5, 7], [1, 2, 11, 4]];
        for (i, &xs) in shapes.iter().enumerate() {
            let salt = 150 + i as u64;
            let x = tensor_from(xs, salt);
            let (_, idx) = adaptive_max_pool(&x, 4).unwrap();
            let r = tensor_from([xs[0], xs[1], 4, 4], salt + 100);
            let gx = pool_backward(&idx, &r).unwrap();
            let mut xv = x.data().to_vec();
            let mut f = |v: &[f64]| {
                let xt = Tensor::from_vec(xs, v.to_vec()).unwrap();
                adaptive_max_pool(&xt, 4).unwrap().0.dot(&r)
            };
            let nx = central_difference(&mut f, &mut xv, FD_STEP);
            assert!(max_relative_error(gx.data(), &nx) < FD_TOLERANCE, "shape {xs:?}");
        }
    }
}
