//! 2D image and mask containers, affine geometry, resampling, patch
//! cropping, and the two similarity measures (Dice, mutual information).
//!
//! Coordinate convention, used everywhere in this crate: `x` is the column
//! index, `y` is the row index, the origin is the top-left pixel, and pixel
//! centers sit at integer coordinates. Storage is row-major.

mod geometry;
mod image;
mod mask;
mod pgm;

pub use geometry::{AffineTransform2D, Point2};
pub use image::{crop_patch, GrayImage};
pub use mask::{
    center_of_mass, dice, downsample2, label_entropy, mutual_information, resample_mask, LabelMask,
    NUM_LABELS,
};
pub use pgm::{read_gray_pgm, read_mask_pgm, write_gray_pgm, write_mask_pgm};

pub(crate) use mask::mi_from_joint;
