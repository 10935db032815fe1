//! Seeded parameter initialization: Kaiming-style fan-in scaling for the
//! ReLU networks, zeros for biases and for heads that must start inert.

use super::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Normal(0, √(2/fan_in)) initialization. Draws are taken in `f64` so the
/// stream is identical across element precisions.
pub fn kaiming_normal<T: Scalar>(
    shape: [usize; 4],
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    assert!(fan_in > 0, "fan_in must be positive");
    let std = (2.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = T::from_f64(z * std);
    }
    t
}

/// 3×3 convolution weights `[out, in, 3, 3]` with fan_in = in·9.
pub fn conv_weight_init<T: Scalar>(out_c: usize, in_c: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    kaiming_normal([out_c, in_c, 3, 3], in_c * 9, rng)
}

/// Linear weights `[out, in, 1, 1]` with fan_in = in.
pub fn linear_weight_init<T: Scalar>(out: usize, input: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    kaiming_normal([out, input, 1, 1], input, rng)
}

/// Zero bias `[out, 1, 1, 1]`.
pub fn bias_init<T: Scalar>(out: usize) -> Tensor<T> {
    Tensor::zeros([out, 1, 1, 1])
}

/// Consumes RNG draws without keeping the values — used to keep parameter
/// streams aligned when a component is skipped.
pub fn skip_draws(rng: &mut ChaCha8Rng, count: usize) {
    for _ in 0..count {
        let _: f64 = rng.gen();
    }
}
