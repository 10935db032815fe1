//! Minimal deterministic neural-network kit.
//!
//! Exactly the pieces the two networks in this crate need — 3×3 same-pad
//! convolution, instance norm, ReLU, max/adaptive-max pooling, nearest 2×
//! upsampling, channel concat, fully-connected layers, the segmentation and
//! smooth-L1 losses, Adam, seeded Kaiming initialization, and flat binary
//! checkpoints. Every layer ships an exact analytic gradient verified
//! against central finite differences at 64-bit precision (see
//! [`gradcheck`]); training runs at 32-bit.

mod adam;
mod checkpoint;
mod conv;
pub mod gradcheck;
mod init;
mod loss;
mod ops;
mod pool;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conv::{conv2d, conv2d_backward, linear, linear_backward};
pub use init::{bias_init, conv_weight_init, kaiming_normal, linear_weight_init, skip_draws};
pub use loss::{
    seg_loss, smooth_l1, smooth_l1_form, smooth_l1_per_coordinate, SegLoss, SmoothL1Form, DICE_EPS,
};
pub use ops::{
    concat_channels, concat_channels_backward, instance_norm, instance_norm_backward, relu,
    relu_backward, upsample2, upsample2_backward, INSTANCE_NORM_EPS,
};
pub use pool::{adaptive_max_pool, max_pool2, pool_backward, PoolIndices};
pub use tensor::{gemm, Scalar, Tensor};
