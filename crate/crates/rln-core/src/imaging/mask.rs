//! Label masks and the overlap statistics used for registration and ranking.

use crate::error::Error;
use crate::imaging::geometry::{AffineTransform2D, Point2};
use crate::Result;

/// Number of distinct labels: 0 = background, 1 = common carotid artery,
/// 2 = thyroid, 3 = trachea.
pub const NUM_LABELS: usize = 4;

/// Dense row-major label image with values in `0..NUM_LABELS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMask {
    /// All-background mask.
    pub fn zeros(width: usize, height: usize) -> Self {
        LabelMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    /// Wrap raw data, validating length and label range.
    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels ({}x{})", width * height, width, height),
                got: format!("{} pixels", data.len()),
            });
        }
        if let Some(&bad) = data.iter().find(|&&v| v as usize >= NUM_LABELS) {
            return Err(Error::LabelOutOfRange {
                value: bad,
                file: None,
            });
        }
        Ok(LabelMask {
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        debug_assert!((label as usize) < NUM_LABELS);
        self.data[y * self.width + x] = label;
    }

    /// Number of pixels with a non-background label.
    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Pixel count per label.
    pub fn label_counts(&self) -> [usize; NUM_LABELS] {
        let mut counts = [0usize; NUM_LABELS];
        for &v in &self.data {
            counts[v as usize] += 1;
        }
        counts
    }
}

fn check_same_shape(a: &LabelMask, b: &LabelMask) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    Ok(())
}

/// Resample `src` under the forward transform `t` onto an `out_width` x
/// `out_height` grid with nearest-neighbor lookup: each output pixel reads the
/// source pixel nearest to `t.inverse()` applied to its own coordinates, and
/// pixels that map outside the source become background.
pub fn resample_mask(
    src: &LabelMask,
    t: &AffineTransform2D,
    out_width: usize,
    out_height: usize,
) -> Result<LabelMask> {
    let inv = t.inverse()?;
    let mut out = LabelMask::zeros(out_width, out_height);
    let w = src.width as isize;
    let h = src.height as isize;
    for y in 0..out_height {
        for x in 0..out_width {
            let p = inv.apply(Point2::new(x as f64, y as f64));
            let sx = p.x.round() as isize;
            let sy = p.y.round() as isize;
            if sx >= 0 && sx < w && sy >= 0 && sy < h {
                out.data[y * out_width + x] = src.data[sy as usize * src.width + sx as usize];
            }
        }
    }
    Ok(out)
}

/// Mean Dice overlap across the foreground labels `1..NUM_LABELS`.
///
/// A label absent from both masks scores a perfect 1.0 for that class, so
/// comparing two masks that each lack, say, the thyroid is not penalised.
pub fn dice(a: &LabelMask, b: &LabelMask) -> Result<f64> {
    check_same_shape(a, b)?;
    let mut inter = [0usize; NUM_LABELS];
    let mut size_a = [0usize; NUM_LABELS];
    let mut size_b = [0usize; NUM_LABELS];
    for (&va, &vb) in a.data.iter().zip(&b.data) {
        size_a[va as usize] += 1;
        size_b[vb as usize] += 1;
        if va == vb {
            inter[va as usize] += 1;
        }
    }
    let mut sum = 0.0;
    for c in 1..NUM_LABELS {
        let denom = size_a[c] + size_b[c];
        sum += if denom == 0 {
            1.0
        } else {
            2.0 * inter[c] as f64 / denom as f64
        };
    }
    Ok(sum / (NUM_LABELS - 1) as f64)
}

/// Mutual information (in nats) of a `NUM_LABELS` x `NUM_LABELS` label
/// co-occurrence histogram over `n` pixels.
pub(crate) fn mi_from_joint(joint: &[[usize; NUM_LABELS]; NUM_LABELS], n: f64) -> f64 {
    let mut marg_a = [0usize; NUM_LABELS];
    let mut marg_b = [0usize; NUM_LABELS];
    for i in 0..NUM_LABELS {
        for j in 0..NUM_LABELS {
            marg_a[i] += joint[i][j];
            marg_b[j] += joint[i][j];
        }
    }
    let mut mi = 0.0;
    for i in 0..NUM_LABELS {
        for j in 0..NUM_LABELS {
            if joint[i][j] == 0 {
                continue;
            }
            let p_ij = joint[i][j] as f64 / n;
            let p_i = marg_a[i] as f64 / n;
            let p_j = marg_b[j] as f64 / n;
            mi += p_ij * (p_ij / (p_i * p_j)).ln();
        }
    }
    mi
}

/// Mutual information (in nats) of the joint label distribution of two
/// same-sized masks, from the dense `NUM_LABELS` x `NUM_LABELS` co-occurrence
/// histogram. Zero when the masks are statistically independent; equal to the
/// label entropy when compared against themselves.
pub fn mutual_information(a: &LabelMask, b: &LabelMask) -> Result<f64> {
    check_same_shape(a, b)?;
    let mut joint = [[0usize; NUM_LABELS]; NUM_LABELS];
    for (&va, &vb) in a.data.iter().zip(&b.data) {
        joint[va as usize][vb as usize] += 1;
    }
    Ok(mi_from_joint(&joint, a.data.len() as f64))
}

/// Stride-2 decimation: keep every even-indexed row and column. Used to build
/// the half-resolution masks the registration search runs on.
pub fn downsample2(m: &LabelMask) -> LabelMask {
    let ow = m.width / 2;
    let oh = m.height / 2;
    let mut out = LabelMask::zeros(ow, oh);
    for y in 0..oh {
        for x in 0..ow {
            out.data[y * ow + x] = m.data[2 * y * m.width + 2 * x];
        }
    }
    out
}

/// Shannon entropy (in nats) of a mask's label distribution.
pub fn label_entropy(m: &LabelMask) -> f64 {
    let counts = m.label_counts();
    let n = m.data.len() as f64;
    let mut h = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
        }
    }
    h
}

/// Unweighted mean coordinate of all foreground pixels (any label > 0).
pub fn center_of_mass(m: &LabelMask) -> Result<Point2> {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut n = 0usize;
    for y in 0..m.height {
        for x in 0..m.width {
            if m.data[y * m.width + x] != 0 {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(Point2::new(sx / n as f64, sy / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn block_mask(width: usize, height: usize, x0: usize, x1: usize, label: u8) -> LabelMask {
        let mut m = LabelMask::zeros(width, height);
        for y in 0..height {
            for x in x0..x1 {
                m.set(x, y, label);
            }
        }
        m
    }

    #[test]
    fn rejects_label_out_of_range() {
        let err = LabelMask::from_data(2, 1, vec![0, 4]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { value: 4, .. }));
    }

    #[test]
    fn rejects_wrong_data_length() {
        assert!(LabelMask::from_data(3, 3, vec![0; 8]).is_err());
    }

    #[test]
    fn dice_of_identical_masks_is_one() {
        let m = block_mask(8, 8, 2, 5, 2);
        assert_abs_diff_eq!(dice(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn dice_of_half_overlapping_blocks() {
        // Class 1 occupies two columns in each mask, shifted by one column:
        // intersection 1 column, so the class-1 Dice is 2*1/(2+2) = 0.5.
        // Classes 2 and 3 are absent from both masks and score 1.0 each.
        let a = block_mask(4, 3, 0, 2, 1);
        let b = block_mask(4, 3, 1, 3, 1);
        assert_abs_diff_eq!(dice(&a, &b).unwrap(), (0.5 + 1.0 + 1.0) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn dice_of_disjoint_blocks() {
        let a = block_mask(6, 2, 0, 2, 3);
        let b = block_mask(6, 2, 3, 5, 3);
        assert_abs_diff_eq!(dice(&a, &b).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn dice_requires_matching_shapes() {
        let a = LabelMask::zeros(4, 4);
        let b = LabelMask::zeros(4, 5);
        assert!(matches!(
            dice(&a, &b),
            Err(Error::DimensionMismatch(4, 4, 4, 5))
        ));
    }

    #[test]
    fn self_mutual_information_equals_entropy() {
        // Half background, half label 1: entropy is ln 2.
        let m = block_mask(4, 4, 0, 2, 1);
        let mi = mutual_information(&m, &m).unwrap();
        assert_abs_diff_eq!(mi, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(mi, label_entropy(&m), epsilon = 1e-12);
    }

    #[test]
    fn independent_masks_have_zero_mutual_information() {
        // One mask splits by column, the other by row; the joint histogram is
        // uniform over the four cells, so MI vanishes.
        let cols = block_mask(4, 4, 0, 2, 1);
        let mut rows = LabelMask::zeros(4, 4);
        for y in 0..2 {
            for x in 0..4 {
                rows.set(x, y, 1);
            }
        }
        assert_abs_diff_eq!(
            mutual_information(&cols, &rows).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn constant_mask_has_zero_entropy_and_mi() {
        let m = LabelMask::zeros(5, 5);
        assert_abs_diff_eq!(label_entropy(&m), 0.0);
        assert_abs_diff_eq!(mutual_information(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn center_of_mass_averages_foreground_pixels() {
        let mut m = LabelMask::zeros(4, 4);
        m.set(0, 0, 1);
        m.set(2, 0, 3);
        let com = center_of_mass(&m).unwrap();
        assert_abs_diff_eq!(com.x, 1.0);
        assert_abs_diff_eq!(com.y, 0.0);
    }

    #[test]
    fn center_of_mass_of_empty_mask_errors() {
        assert!(matches!(
            center_of_mass(&LabelMask::zeros(3, 3)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn downsample2_keeps_even_pixels() {
        let mut m = LabelMask::zeros(4, 4);
        m.set(0, 0, 1);
        m.set(2, 0, 2);
        m.set(1, 1, 3); // odd row/col, dropped
        m.set(2, 2, 3);
        let d = downsample2(&m);
        assert_eq!(d.width(), 2);
        assert_eq!(d.height(), 2);
        assert_eq!(d.data(), &[1, 2, 0, 3]);
    }

    #[test]
    fn resample_identity_is_lossless() {
        let m = block_mask(8, 6, 2, 5, 2);
        let out = resample_mask(&m, &AffineTransform2D::identity(), 8, 6).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn resample_translation_moves_content_and_pads_background() {
        let mut m = LabelMask::zeros(4, 4);
        m.set(1, 1, 3);
        let t = AffineTransform2D::translation(2.0, 1.0);
        let out = resample_mask(&m, &t, 4, 4).unwrap();
        assert_eq!(out.get(3, 2), 3);
        assert_eq!(out.foreground_count(), 1);
    }

    #[test]
    fn resample_moves_center_of_mass_with_the_transform() {
        // A block that stays fully inside the frame after the shift, so no
        // content is clipped away at the border.
        let mut m = LabelMask::zeros(16, 16);
        for y in 5..9 {
            for x in 4..8 {
                m.set(x, y, 1);
            }
        }
        let t = AffineTransform2D::translation(3.0, -2.0);
        let out = resample_mask(&m, &t, 16, 16).unwrap();
        let before = center_of_mass(&m).unwrap();
        let after = center_of_mass(&out).unwrap();
        assert_abs_diff_eq!(after.x, before.x + 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(after.y, before.y - 2.0, epsilon = 1e-9);
    }
}
