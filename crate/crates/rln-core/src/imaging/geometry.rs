//! Planar points and 6-DOF affine transforms.

use crate::error::Error;
use crate::Result;

/// Continuous pixel coordinate: `x` is the column, `y` is the row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Euclidean distance to another point.
    pub fn dist(&self, other: &Point2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    /// Clamp into `[0, width-1] x [0, height-1]`.
    pub fn clamped(&self, width: usize, height: usize) -> Point2 {
        Point2 {
            x: self.x.clamp(0.0, (width - 1) as f64),
            y: self.y.clamp(0.0, (height - 1) as f64),
        }
    }
}

/// Planar affine transform `p -> linear * p + translation`.
///
/// The same forward convention is used for points and for mask resampling,
/// so a pixel and its coordinate move together: `resample_mask` pulls each
/// output pixel from `inverse(t)` applied to its location, which places the
/// content of source pixel `p` at `apply_to_point(t, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform2D {
    /// Row-major 2x2 linear part `[[a, b], [c, d]]`.
    pub linear: [[f64; 2]; 2],
    /// Translation in pixels.
    pub translation: [f64; 2],
}

impl AffineTransform2D {
    pub fn new(linear: [[f64; 2]; 2], translation: [f64; 2]) -> Self {
        AffineTransform2D {
            linear,
            translation,
        }
    }

    /// The neutral element: `compose(identity, t) == t` exactly.
    pub fn identity() -> Self {
        AffineTransform2D {
            linear: [[1.0, 0.0], [0.0, 1.0]],
            translation: [0.0, 0.0],
        }
    }

    /// Pure translation by `(tx, ty)`.
    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineTransform2D {
            linear: [[1.0, 0.0], [0.0, 1.0]],
            translation: [tx, ty],
        }
    }

    /// Counter-clockwise rotation (in the x-right, y-down pixel frame) by
    /// `angle` radians about `center`.
    pub fn rotation_about(angle: f64, center: Point2) -> Self {
        let (s, c) = angle.sin_cos();
        let linear = [[c, -s], [s, c]];
        // translation = center - linear * center
        let tx = center.x - (linear[0][0] * center.x + linear[0][1] * center.y);
        let ty = center.y - (linear[1][0] * center.x + linear[1][1] * center.y);
        AffineTransform2D {
            linear,
            translation: [tx, ty],
        }
    }

    pub fn det(&self) -> f64 {
        self.linear[0][0] * self.linear[1][1] - self.linear[0][1] * self.linear[1][0]
    }

    pub fn is_invertible(&self) -> bool {
        self.det().abs() > 1e-6
    }

    /// `second . first`: applies `first`, then `second`.
    pub fn compose(second: &AffineTransform2D, first: &AffineTransform2D) -> AffineTransform2D {
        let a = second.linear;
        let b = first.linear;
        let linear = [
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ];
        let translation = [
            a[0][0] * first.translation[0] + a[0][1] * first.translation[1] + second.translation[0],
            a[1][0] * first.translation[0] + a[1][1] * first.translation[1] + second.translation[1],
        ];
        AffineTransform2D {
            linear,
            translation,
        }
    }

    pub fn inverse(&self) -> Result<AffineTransform2D> {
        let det = self.det();
        if det.abs() <= 1e-6 {
            return Err(Error::NonInvertibleTransform);
        }
        let inv = [
            [self.linear[1][1] / det, -self.linear[0][1] / det],
            [-self.linear[1][0] / det, self.linear[0][0] / det],
        ];
        let tx = -(inv[0][0] * self.translation[0] + inv[0][1] * self.translation[1]);
        let ty = -(inv[1][0] * self.translation[0] + inv[1][1] * self.translation[1]);
        Ok(AffineTransform2D {
            linear: inv,
            translation: [tx, ty],
        })
    }
}

/// Forward application: `linear * p + translation`.
pub fn apply_to_point(t: &AffineTransform2D, p: Point2) -> Point2 {
    Point2 {
        x: t.linear[0][0] * p.x + t.linear[0][1] * p.y + t.translation[0],
        y: t.linear[1][0] * p.x + t.linear[1][1] * p.y + t.translation[1],
    }
}

impl AffineTransform2D {
    /// Convenience method form of [`apply_to_point`].
    pub fn apply(&self, p: Point2) -> Point2 {
        apply_to_point(self, p)
    }
}
