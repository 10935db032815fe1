//! Localization of the recurrent laryngeal nerve (RLN) centroid in 2D
//! grayscale scans.
//!
//! The pipeline has three stages:
//!
//! 1. **Segmentation** ([`seg_provider`]): obtain a 4-label anatomy mask
//!    (background, common carotid artery, thyroid, trachea) for the query
//!    image, either from a perturbed reference mask or from a small trained
//!    segmentation network.
//! 2. **Shape alignment** ([`bsa`], [`registration`]): register every atlas
//!    mask to the query mask with a 6-parameter affine transform that
//!    maximizes label mutual information, rank the registered atlases by Dice
//!    overlap, and average the transformed RLN landmarks of the best `k` to
//!    get a candidate location.
//! 3. **Refinement** ([`locate_net`]): a dual-path convolutional regressor
//!    looks at a coarse 64x64 patch and a fine 24x24 patch around the
//!    candidate and predicts the residual offset to the true centroid.
//!
//! [`synth`] generates a phantom cohort with known geometry so the whole
//! chain can be validated end to end, [`eval`] scores predictions (mean L1
//! distance and hit rate within a fixed radius), and [`pipeline`] wires the
//! stages together behind one entry point.

pub mod bsa;
pub mod config;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod locate_net;
pub mod nnkit;
pub mod pipeline;
pub mod registration;
pub mod seg_provider;
pub mod synth;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
