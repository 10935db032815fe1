//! Affine mask-to-mask registration by mutual-information maximization.
//!
//! `register` aligns a *moving* atlas mask onto a *fixed* query mask with a
//! 6-parameter affine transform (translation, rotation, anisotropic scale,
//! shear). The search starts from a center-of-mass translation, runs a
//! deterministic Nelder-Mead simplex with a few perturbed restarts, and by
//! default evaluates the objective on 2x-downsampled masks, re-scoring the
//! final candidates at full resolution.

mod simplex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::imaging::{downsample2, mi_from_joint, AffineTransform2D, LabelMask, Point2, NUM_LABELS};
use crate::imaging::{center_of_mass, label_entropy};
use crate::Result;

/// Search-space bounds. The optimizer projects every trial point into this
/// box, which also keeps `to_affine` invertible (its determinant is
/// `scale_x * scale_y` >= 0.25).
pub const SCALE_BOUNDS: (f64, f64) = (0.5, 2.0);
pub const ROTATION_BOUND: f64 = std::f64::consts::FRAC_PI_2;
pub const SHEAR_BOUND: f64 = 0.5;
pub const TRANSLATION_BOUND: f64 = 128.0;

/// Simplex coordinates weight radians by this factor so that one unit of
/// search step means roughly the same alignment change as one pixel of
/// translation.
const ROTATION_WEIGHT: f64 = 64.0;
/// Likewise for the dimensionless scale and shear parameters.
const SHAPE_WEIGHT: f64 = 128.0;
/// Initial simplex edge in scaled units (2 px / ~1.8 deg / ~0.016 scale).
const INITIAL_STEP: f64 = 2.0;
/// Restart starting points are jittered uniformly by up to this many scaled
/// units per coordinate.
const RESTART_JITTER: f64 = 6.0;

/// The six registration parameters. The transform acts about the image
/// center `c`: `p -> R(rotation) * Shear(shear) * Scale(sx, sy) * (p - c) + c
/// + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParams {
    /// Translation in pixels.
    pub tx: f64,
    pub ty: f64,
    /// Rotation in radians (positive turns x towards y, i.e. clockwise on
    /// screen with y pointing down).
    pub rotation: f64,
    /// Anisotropic scale factors.
    pub scale_x: f64,
    pub scale_y: f64,
    /// Horizontal shear coefficient.
    pub shear: f64,
}

impl RegParams {
    pub fn identity() -> Self {
        RegParams {
            tx: 0.0,
            ty: 0.0,
            rotation: 0.0,
            scale_x: 1.0,
            scale_y: 1.0,
            shear: 0.0,
        }
    }

    /// Project every field into the search bounds.
    pub fn clamped(&self) -> Self {
        RegParams {
            tx: self.tx.clamp(-TRANSLATION_BOUND, TRANSLATION_BOUND),
            ty: self.ty.clamp(-TRANSLATION_BOUND, TRANSLATION_BOUND),
            rotation: self.rotation.clamp(-ROTATION_BOUND, ROTATION_BOUND),
            scale_x: self.scale_x.clamp(SCALE_BOUNDS.0, SCALE_BOUNDS.1),
            scale_y: self.scale_y.clamp(SCALE_BOUNDS.0, SCALE_BOUNDS.1),
            shear: self.shear.clamp(-SHEAR_BOUND, SHEAR_BOUND),
        }
    }

    /// Build the affine transform acting about `center`.
    pub fn to_affine(&self, center: Point2) -> AffineTransform2D {
        let (s, c) = self.rotation.sin_cos();
        // R(rotation) * Shear(shear) * Scale(sx, sy)
        let linear = [
            [c * self.scale_x, (c * self.shear - s) * self.scale_y],
            [s * self.scale_x, (s * self.shear + c) * self.scale_y],
        ];
        let tx = center.x - (linear[0][0] * center.x + linear[0][1] * center.y) + self.tx;
        let ty = center.y - (linear[1][0] * center.x + linear[1][1] * center.y) + self.ty;
        AffineTransform2D::new(linear, [tx, ty])
    }

    /// Simplex coordinates: pixels for translation, weighted radians and
    /// weighted dimensionless units otherwise, so steps are commensurate.
    fn to_scaled(&self) -> [f64; 6] {
        [
            self.tx,
            self.ty,
            self.rotation * ROTATION_WEIGHT,
            self.scale_x * SHAPE_WEIGHT,
            self.scale_y * SHAPE_WEIGHT,
            self.shear * SHAPE_WEIGHT,
        ]
    }

    fn from_scaled(v: &[f64]) -> Self {
        RegParams {
            tx: v[0],
            ty: v[1],
            rotation: v[2] / ROTATION_WEIGHT,
            scale_x: v[3] / SHAPE_WEIGHT,
            scale_y: v[4] / SHAPE_WEIGHT,
            shear: v[5] / SHAPE_WEIGHT,
        }
    }
}

/// Knobs for the registration search.
#[derive(Debug, Clone)]
pub struct RegistrationConfig {
    /// Objective-evaluation budget per restart.
    pub max_evaluations: usize,
    /// Stop a restart once the simplex's value spread falls below this (in
    /// nats of mutual information).
    pub simplex_tolerance: f64,
    /// Number of simplex runs: the first starts at the center-of-mass
    /// initialization, the rest at seeded jitters of it.
    pub restarts: usize,
    /// Seed for the restart jitter.
    pub seed: u64,
    /// Search on 2x-downsampled masks and only score the final candidates at
    /// full resolution.
    pub coarse_search: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            max_evaluations: 400,
            simplex_tolerance: 1e-5,
            restarts: 3,
            seed: 0,
            coarse_search: true,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_evaluations < 1 {
            return Err(Error::InvalidConfig(
                "max_evaluations must be at least 1".into(),
            ));
        }
        if self.restarts < 1 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        if !self.simplex_tolerance.is_finite() || self.simplex_tolerance < 0.0 {
            return Err(Error::InvalidConfig(
                "simplex_tolerance must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of `register`.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// The best parameters found (always within bounds).
    pub params: RegParams,
    /// `params.to_affine(image center)`, ready to transform landmarks.
    pub transform: AffineTransform2D,
    /// Full-resolution mutual information of the aligned pair, in nats.
    /// Never below the MI of the center-of-mass starting point.
    pub mi: f64,
    /// Total objective evaluations spent (coarse and full resolution).
    pub evaluations: usize,
}

/// Center-of-mass initialization: a pure translation moving the foreground
/// centroid of `moving` onto that of `fixed`.
pub fn initialize(moving: &LabelMask, fixed: &LabelMask) -> Result<RegParams> {
    let cm = center_of_mass(moving)?;
    let cf = center_of_mass(fixed)?;
    Ok(RegParams {
        tx: cf.x - cm.x,
        ty: cf.y - cm.y,
        ..RegParams::identity()
    })
}

/// Mutual information between `fixed` and `moving` resampled under `t`,
/// without materializing the resampled mask: each fixed-grid pixel is mapped
/// through `t.inverse()`, the nearest moving pixel (or background, outside)
/// feeds a joint label histogram, and the MI of that histogram is returned.
pub fn mi_under_transform(
    moving: &LabelMask,
    fixed: &LabelMask,
    t: &AffineTransform2D,
) -> Result<f64> {
    let inv = t.inverse()?;
    let a = inv.linear[0][0];
    let b = inv.linear[0][1];
    let c = inv.linear[1][0];
    let d = inv.linear[1][1];
    let mdata = moving.data();
    let fdata = fixed.data();
    let mw = moving.width();
    let mh = moving.height();
    let fw = fixed.width();
    let mut joint = [[0usize; NUM_LABELS]; NUM_LABELS];
    for y in 0..fixed.height() {
        let yf = y as f64;
        // Row-incremental source coordinates: start at x = 0, add one column
        // step per pixel.
        let mut sx = b * yf + inv.translation[0];
        let mut sy = d * yf + inv.translation[1];
        let frow = &fdata[y * fw..(y + 1) * fw];
        for &flab in frow {
            let rx = sx.round();
            let ry = sy.round();
            let mut mlab = 0u8;
            if rx >= 0.0 && ry >= 0.0 {
                let ix = rx as usize;
                let iy = ry as usize;
                if ix < mw && iy < mh {
                    mlab = mdata[iy * mw + ix];
                }
            }
            joint[mlab as usize][flab as usize] += 1;
            sx += a;
            sy += c;
        }
    }
    Ok(mi_from_joint(&joint, fdata.len() as f64))
}

/// Grid center of a `width` x `height` image: the point the affine parameters
/// rotate/scale/shear about.
pub fn grid_center(width: usize, height: usize) -> Point2 {
    Point2::new((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0)
}

/// Align `moving` onto `fixed`, maximizing label mutual information over the
/// six affine parameters. Deterministic for fixed inputs and seed; the result
/// never scores below the center-of-mass starting point, which always remains
/// a candidate.
pub fn register(
    moving: &LabelMask,
    fixed: &LabelMask,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    if moving.width() != fixed.width() || moving.height() != fixed.height() {
        return Err(Error::DimensionMismatch(
            moving.width(),
            moving.height(),
            fixed.width(),
            fixed.height(),
        ));
    }
    let p0 = initialize(moving, fixed)?.clamped();
    let full_center = grid_center(fixed.width(), fixed.height());

    // Coarse level: stride-2 masks, with the transform center and translation
    // halved so full-resolution parameters score consistently.
    let coarse = cfg.coarse_search && fixed.width() >= 64 && fixed.height() >= 64;
    let (search_moving, search_fixed, search_center, t_factor) = if coarse {
        (
            downsample2(moving),
            downsample2(fixed),
            Point2::new(full_center.x / 2.0, full_center.y / 2.0),
            0.5,
        )
    } else {
        (moving.clone(), fixed.clone(), full_center, 1.0)
    };

    let mut evaluations = 0usize;
    let mut objective = |v: &[f64]| -> f64 {
        let p = RegParams::from_scaled(v).clamped();
        let p_level = RegParams {
            tx: p.tx * t_factor,
            ty: p.ty * t_factor,
            ..p
        };
        let t = p_level.to_affine(search_center);
        let mi = mi_under_transform(&search_moving, &search_fixed, &t)
            .expect("in-bounds parameters are always invertible");
        -mi
    };

    // The COM start itself is candidate 0, so the final result can never be
    // worse than the initialization.
    let mut candidates: Vec<RegParams> = vec![p0];
    let start0 = p0.to_scaled();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for restart in 0..cfg.restarts {
        let mut start = start0;
        if restart > 0 {
            for coord in &mut start {
                *coord += rng.gen_range(-RESTART_JITTER..=RESTART_JITTER);
            }
        }
        let run = simplex::minimize(
            &mut objective,
            &start,
            &[INITIAL_STEP; 6],
            cfg.max_evaluations,
            cfg.simplex_tolerance,
        );
        evaluations += run.evaluations;
        candidates.push(RegParams::from_scaled(&run.x).clamped());
    }

    // Score every candidate at full resolution; strict improvement keeps the
    // earliest candidate (COM start first, then restart order) on exact ties.
    let mut best_mi = f64::NEG_INFINITY;
    let mut best = p0;
    for p in &candidates {
        let mi = mi_under_transform(moving, fixed, &p.to_affine(full_center))?;
        evaluations += 1;
        if mi > best_mi {
            best_mi = mi;
            best = *p;
        }
    }
    Ok(RegistrationResult {
        params: best,
        transform: best.to_affine(full_center),
        mi: best_mi,
        evaluations,
    })
}

/// Upper bound for any MI against `fixed`: its own label entropy. Useful for
/// sanity checks and tests.
pub fn mi_upper_bound(fixed: &LabelMask) -> f64 {
    label_entropy(fixed)
}
