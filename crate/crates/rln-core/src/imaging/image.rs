//! Grayscale intensity images and patch extraction.

use crate::error::Error;
use crate::imaging::geometry::Point2;
use crate::Result;

/// Dense row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels ({}x{})", width * height, width, height),
                got: format!("{} pixels", data.len()),
            });
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }
}

/// Extract a `size` x `size` patch whose top-left corner sits at
/// `round(center) - size/2` in each axis. Pixels outside the image are
/// zero-filled, so patches near the border stay well-defined. `size` must be
/// even and at least 2 so the nominal center pixel lands at `(size/2, size/2)`.
pub fn crop_patch(image: &GrayImage, center: Point2, size: usize) -> Result<GrayImage> {
    if size < 2 || size % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "patch size must be even and >= 2, got {size}"
        )));
    }
    if !center.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "patch center must be finite, got ({}, {})",
            center.x, center.y
        )));
    }
    let half = (size / 2) as isize;
    let x0 = center.x.round() as isize - half;
    let y0 = center.y.round() as isize - half;
    let mut patch = GrayImage::zeros(size, size);
    let w = image.width as isize;
    let h = image.height as isize;
    for py in 0..size as isize {
        let sy = y0 + py;
        if sy < 0 || sy >= h {
            continue;
        }
        for px in 0..size as isize {
            let sx = x0 + px;
            if sx < 0 || sx >= w {
                continue;
            }
            patch.data[py as usize * size + px as usize] =
                image.data[sy as usize * image.width + sx as usize];
        }
    }
    Ok(patch)
}
