//! Synthetic neck phantoms: 4-label anatomy masks, ultrasound-like intensity
//! images, and a ground-truth RLN centroid with known geometry.
//!
//! Each phantom is built in a canonical frame — trachea low-center, thyroid
//! lobes above it, common carotid artery far lateral on the scanned side —
//! then rigidly rotated by the per-subject probe angle θ about the image
//! center. The RLN sits in the tracheoesophageal groove: at the midpoint of
//! the trachea and CCA centers plus a configured offset, plus small Gaussian
//! noise. The intensity image gives every organ a base brightness, adds a
//! faint bright dot at the nerve (and a few look-alike distractor dots
//! elsewhere), and multiplies in speckle noise.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::derive_seed;
use crate::error::Error;
use crate::imaging::{write_gray_pgm, write_mask_pgm, GrayImage, LabelMask, Point2};
use crate::Result;

/// Which recurrent laryngeal nerve a record depicts. The scanned-side carotid
/// and the nerve offset mirror horizontally between the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

impl FromStr for Side {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(format!("unknown side `{other}` (expected left|right)")),
        }
    }
}

/// Dataset split of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train|val|test)")),
        }
    }
}

/// Geometry and noise knobs for one phantom. Lateral offsets are written for
/// the left side; `side: Right` mirrors them about the vertical axis.
#[derive(Debug, Clone)]
pub struct PhantomParams {
    pub width: usize,
    pub height: usize,
    pub side: Side,
    /// Probe scan angle in degrees; the whole scene rotates rigidly by this
    /// about the image center.
    pub angle_theta_deg: f64,
    /// Trachea: absolute canonical center and ellipse semi-axes (px).
    pub trachea_center: (f64, f64),
    pub trachea_axes: (f64, f64),
    /// Thyroid lobes: offset of the lobe centers from the trachea center
    /// (one lobe at +x, one at -x) and their semi-axes.
    pub thyroid_lobe_offset: (f64, f64),
    pub thyroid_axes: (f64, f64),
    /// Inward tilt of each lobe, radians.
    pub thyroid_tilt: f64,
    /// Common carotid artery: offset of its center from the trachea center
    /// (left-side convention) and its radius.
    pub cca_offset: (f64, f64),
    pub cca_radius: f64,
    /// RLN offset from the trachea–CCA midpoint (left-side convention).
    pub rln_offset: (f64, f64),
    /// Per-subject geometry jitter: organ centers (px), semi-axes (fraction),
    /// and a global translation of the whole scene (px).
    pub center_jitter: f64,
    pub axis_jitter_frac: f64,
    pub translation_jitter: f64,
    /// Gaussian noise on the RLN point (px) — anatomical variability that no
    /// prior can explain away.
    pub rln_noise_sigma: f64,
    /// Multiplicative speckle strength on the intensity image.
    pub speckle_scale: f64,
    /// Number of nerve-look-alike bright dots placed away from the true RLN.
    pub distractor_count: usize,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            width: 256,
            height: 256,
            side: Side::Left,
            angle_theta_deg: 0.0,
            trachea_center: (127.5, 155.0),
            trachea_axes: (27.0, 23.0),
            thyroid_lobe_offset: (52.0, -29.0),
            thyroid_axes: (21.0, 27.0),
            thyroid_tilt: 0.35,
            cca_offset: (-88.0, -41.0),
            cca_radius: 13.0,
            rln_offset: (-20.0, 18.0),
            center_jitter: 6.0,
            axis_jitter_frac: 0.15,
            translation_jitter: 12.0,
            rln_noise_sigma: 2.0,
            speckle_scale: 0.15,
            distractor_count: 3,
        }
    }
}

impl PhantomParams {
    /// The scan-angle range cohorts draw from, degrees.
    pub const THETA_RANGE_DEG: f64 = 15.0;

    /// Canonical (zero-noise, zero-angle) RLN position:
    /// trachea center + cca_offset/2 + rln_offset, with lateral components
    /// mirrored on the right side.
    pub fn canonical_rln(&self) -> Point2 {
        let m = self.mirror();
        Point2::new(
            self.trachea_center.0 + m * self.cca_offset.0 / 2.0 + m * self.rln_offset.0,
            self.trachea_center.1 + self.cca_offset.1 / 2.0 + self.rln_offset.1,
        )
    }

    fn mirror(&self) -> f64 {
        match self.side {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    fn image_center(&self) -> Point2 {
        Point2::new((self.width - 1) as f64 / 2.0, (self.height - 1) as f64 / 2.0)
    }
}

/// Labels used by the rasterizer; the painting order encodes the priority
/// trachea > thyroid > CCA wherever shapes overlap.
pub const LABEL_CCA: u8 = 1;
pub const LABEL_THYROID: u8 = 2;
pub const LABEL_TRACHEA: u8 = 3;

/// Base intensity per label (background, CCA lumen, thyroid, trachea).
const BASE_INTENSITY: [f32; 4] = [0.12, 0.05, 0.55, 0.22];
/// Amplitude and radius of the nerve dot (and its distractor look-alikes).
const DOT_AMPLITUDE: f64 = 0.30;
const DOT_SIGMA: f64 = 1.6;
/// Distractors stay at least this far from the true nerve.
const DISTRACTOR_CLEARANCE: f64 = 25.0;
/// Distractors keep this margin from the image border.
const DISTRACTOR_MARGIN: f64 = 24.0;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    center: Point2,
    axes: (f64, f64),
    orientation: f64,
    label: u8,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center.x;
        let dy = y - self.center.y;
        let (s, c) = self.orientation.sin_cos();
        let u = (dx * c + dy * s) / self.axes.0;
        let v = (-dx * s + dy * c) / self.axes.1;
        u * u + v * v <= 1.0
    }

    /// Circumscribed radius, orientation-independent.
    fn bound(&self) -> f64 {
        self.axes.0.max(self.axes.1)
    }
}

struct Scene {
    shapes: Vec<Ellipse>, // paint order: CCA, lobes, trachea
    rln: Point2,
}

/// Uniform draw in [-a, a] with a constant rng cost even when `a` is zero, so
/// zero-noise configurations consume the same stream positions.
fn jitter(rng: &mut ChaCha8Rng, a: f64) -> f64 {
    (2.0 * rng.gen::<f64>() - 1.0) * a
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * sigma
}

fn rotate_about(p: Point2, center: Point2, angle: f64) -> Point2 {
    let (s, c) = angle.sin_cos();
    let dx = p.x - center.x;
    let dy = p.y - center.y;
    Point2::new(center.x + c * dx - s * dy, center.y + s * dx + c * dy)
}

/// Draw one jittered scene in the rotated frame. Consumes a fixed number of
/// uniform draws plus two Gaussians, regardless of parameter values.
fn draw_scene(params: &PhantomParams, rng: &mut ChaCha8Rng, shrink: f64) -> Scene {
    let m = params.mirror();
    let cj = params.center_jitter * shrink;
    let aj = params.axis_jitter_frac;
    let jitter_center = |rng: &mut ChaCha8Rng, base: (f64, f64)| -> Point2 {
        Point2::new(base.0 + jitter(rng, cj), base.1 + jitter(rng, cj))
    };
    let jitter_axes = |rng: &mut ChaCha8Rng, base: (f64, f64)| -> (f64, f64) {
        (
            base.0 * (1.0 + jitter(rng, aj)),
            base.1 * (1.0 + jitter(rng, aj)),
        )
    };

    let tc = params.trachea_center;
    let trachea_center = jitter_center(rng, tc);
    let trachea_axes = jitter_axes(rng, params.trachea_axes);

    let lobe = params.thyroid_lobe_offset;
    let lobe_left_center =
        jitter_center(rng, (tc.0 - lobe.0, tc.1 + lobe.1));
    let lobe_left_axes = jitter_axes(rng, params.thyroid_axes);
    let lobe_right_center =
        jitter_center(rng, (tc.0 + lobe.0, tc.1 + lobe.1));
    let lobe_right_axes = jitter_axes(rng, params.thyroid_axes);

    let cca_base = (tc.0 + m * params.cca_offset.0, tc.1 + params.cca_offset.1);
    let cca_center = jitter_center(rng, cca_base);
    let cca_radius = params.cca_radius * (1.0 + jitter(rng, aj));

    // Global translation moves every organ (and thus the nerve) together.
    let shift = Point2::new(
        jitter(rng, params.translation_jitter * shrink),
        jitter(rng, params.translation_jitter * shrink),
    );
    let moved = |p: Point2| Point2::new(p.x + shift.x, p.y + shift.y);
    let trachea_center = moved(trachea_center);
    let lobe_left_center = moved(lobe_left_center);
    let lobe_right_center = moved(lobe_right_center);
    let cca_center = moved(cca_center);

    // Nerve in the groove: trachea–CCA midpoint plus the configured offset,
    // plus irreducible anatomical noise.
    let rln = Point2::new(
        (trachea_center.x + cca_center.x) / 2.0 + m * params.rln_offset.0
            + gaussian(rng, params.rln_noise_sigma),
        (trachea_center.y + cca_center.y) / 2.0 + params.rln_offset.1
            + gaussian(rng, params.rln_noise_sigma),
    );

    // Rigid rotation by the probe angle about the image center.
    let theta = params.angle_theta_deg.to_radians();
    let ic = params.image_center();
    let rot = |p: Point2| rotate_about(p, ic, theta);

    let shapes = vec![
        Ellipse {
            center: rot(cca_center),
            axes: (cca_radius, cca_radius),
            orientation: theta,
            label: LABEL_CCA,
        },
        Ellipse {
            center: rot(lobe_left_center),
            axes: lobe_left_axes,
            orientation: -params.thyroid_tilt + theta,
            label: LABEL_THYROID,
        },
        Ellipse {
            center: rot(lobe_right_center),
            axes: lobe_right_axes,
            orientation: params.thyroid_tilt + theta,
            label: LABEL_THYROID,
        },
        Ellipse {
            center: rot(trachea_center),
            axes: trachea_axes,
            orientation: theta,
            label: LABEL_TRACHEA,
        },
    ];
    Scene {
        shapes,
        rln: rot(rln),
    }
}

fn scene_in_bounds(scene: &Scene, params: &PhantomParams) -> bool {
    let w = params.width as f64;
    let h = params.height as f64;
    let margin = 2.0;
    for e in &scene.shapes {
        let b = e.bound() + margin;
        if e.center.x - b < 0.0
            || e.center.x + b > w - 1.0
            || e.center.y - b < 0.0
            || e.center.y + b > h - 1.0
        {
            return false;
        }
    }
    let r = 8.0;
    scene.rln.x >= r && scene.rln.x <= w - 1.0 - r && scene.rln.y >= r && scene.rln.y <= h - 1.0 - r
}

/// Generate one phantom: the anatomy label mask, the intensity image, and the
/// ground-truth RLN centroid. Deterministic per `(params, seed)`. If the
/// jittered geometry would leave the frame, it is redrawn with progressively
/// smaller jitter, and after 10 failed attempts an error is returned.
pub fn generate_phantom(
    params: &PhantomParams,
    seed: u64,
) -> Result<(LabelMask, GrayImage, Point2)> {
    if params.width < 64 || params.height < 64 {
        return Err(Error::InvalidConfig(format!(
            "phantom frame must be at least 64x64, got {}x{}",
            params.width, params.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut scene = None;
    for attempt in 0..10 {
        let candidate = draw_scene(params, &mut rng, 0.75f64.powi(attempt));
        if scene_in_bounds(&candidate, params) {
            scene = Some(candidate);
            break;
        }
    }
    let scene = scene.ok_or_else(|| {
        Error::Degenerate("phantom geometry left the frame in 10 consecutive draws".into())
    })?;

    // Distractor dots: rejection-sample positions away from the nerve.
    let mut distractors = Vec::with_capacity(params.distractor_count);
    for _ in 0..params.distractor_count {
        let mut placed = false;
        for _ in 0..64 {
            let x = DISTRACTOR_MARGIN
                + rng.gen::<f64>() * (params.width as f64 - 1.0 - 2.0 * DISTRACTOR_MARGIN);
            let y = DISTRACTOR_MARGIN
                + rng.gen::<f64>() * (params.height as f64 - 1.0 - 2.0 * DISTRACTOR_MARGIN);
            let p = Point2::new(x, y);
            if p.dist(&scene.rln) >= DISTRACTOR_CLEARANCE {
                distractors.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Degenerate(
                "could not place a distractor away from the nerve".into(),
            ));
        }
    }

    // Rasterize the mask; painting order realizes trachea > thyroid > CCA.
    let mut mask = LabelMask::zeros(params.width, params.height);
    for shape in &scene.shapes {
        let b = shape.bound();
        let x0 = ((shape.center.x - b).floor().max(0.0)) as usize;
        let x1 = ((shape.center.x + b).ceil().min((params.width - 1) as f64)) as usize;
        let y0 = ((shape.center.y - b).floor().max(0.0)) as usize;
        let y1 = ((shape.center.y + b).ceil().min((params.height - 1) as f64)) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if shape.contains(x as f64, y as f64) {
                    mask.set(x, y, shape.label);
                }
            }
        }
    }

    // Intensity: per-organ base, bright dots, then multiplicative speckle.
    let mut image = GrayImage::zeros(params.width, params.height);
    for y in 0..params.height {
        for x in 0..params.width {
            image.set(x, y, BASE_INTENSITY[mask.get(x, y) as usize]);
        }
    }
    let add_dot = |image: &mut GrayImage, p: Point2| {
        let reach = (4.0 * DOT_SIGMA).ceil();
        let x0 = ((p.x - reach).floor().max(0.0)) as usize;
        let x1 = ((p.x + reach).ceil().min((params.width - 1) as f64)) as usize;
        let y0 = ((p.y - reach).floor().max(0.0)) as usize;
        let y1 = ((p.y + reach).ceil().min((params.height - 1) as f64)) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2);
                let bump = DOT_AMPLITUDE * (-d2 / (2.0 * DOT_SIGMA * DOT_SIGMA)).exp();
                let v = image.get(x, y) + bump as f32;
                image.set(x, y, v);
            }
        }
    };
    add_dot(&mut image, scene.rln);
    for d in &distractors {
        add_dot(&mut image, *d);
    }
    for y in 0..params.height {
        for x in 0..params.width {
            let n = gaussian(&mut rng, 1.0);
            let v = image.get(x, y) as f64 * (1.0 + params.speckle_scale * n);
            image.set(x, y, v.clamp(0.0, 1.0) as f32);
        }
    }

    Ok((mask, image, scene.rln))
}

/// One row of the cohort manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub side: Side,
    pub angle_deg: f64,
    pub centroid: Point2,
}

/// The full cohort manifest, in generation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortManifest {
    pub records: Vec<ManifestRecord>,
}

impl CohortManifest {
    pub fn filter(&self, split: Split, side: Side) -> impl Iterator<Item = &ManifestRecord> {
        self.records
            .iter()
            .filter(move |r| r.split == split && r.side == side)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

pub const MANIFEST_HEADER: &str = "id,split,side,angle_deg,centroid_x,centroid_y";

/// Path helpers for the on-disk dataset layout.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.csv")
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("masks").join(format!("{id}.pgm"))
}

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("images").join(format!("{id}.pgm"))
}

/// Serialize a manifest: fixed header, LF line endings, 6-decimal reals.
pub fn manifest_to_string(manifest: &CohortManifest) -> String {
    let mut out = String::with_capacity(64 * (manifest.records.len() + 1));
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for r in &manifest.records {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            r.id, r.split, r.side, r.angle_deg, r.centroid.x, r.centroid.y
        ));
    }
    out
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &CohortManifest) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest_to_string(manifest)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<CohortManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::MalformedManifest {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == MANIFEST_HEADER => {}
        other => {
            return Err(bad(format!(
                "bad header {:?}, expected {MANIFEST_HEADER:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(bad(format!(
                "line {lineno}: expected 6 fields, got {}",
                fields.len()
            )));
        }
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(bad(format!("line {lineno}: empty id")));
        }
        if !seen.insert(id.clone()) {
            return Err(bad(format!("line {lineno}: duplicate id `{id}`")));
        }
        let split = Split::from_str(fields[1]).map_err(|e| bad(format!("line {lineno}: {e}")))?;
        let side = Side::from_str(fields[2]).map_err(|e| bad(format!("line {lineno}: {e}")))?;
        let parse_f = |s: &str, name: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| bad(format!("line {lineno}: bad {name} `{s}`")))
        };
        records.push(ManifestRecord {
            id,
            split,
            side,
            angle_deg: parse_f(fields[3], "angle_deg")?,
            centroid: Point2::new(
                parse_f(fields[4], "centroid_x")?,
                parse_f(fields[5], "centroid_y")?,
            ),
        });
    }
    Ok(CohortManifest { records })
}

/// Desired relative sizes of the train/val/test splits.
#[derive(Debug, Clone, Copy)]
pub struct SplitRatio {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatio {
    fn default() -> Self {
        // Desk-scale 150/20/50, echoing the larger clinical proportions.
        SplitRatio {
            train: 150.0,
            val: 20.0,
            test: 50.0,
        }
    }
}

impl SplitRatio {
    fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        let total = self.train + self.val + self.test;
        if !(total.is_finite() && total > 0.0)
            || self.train < 0.0
            || self.val < 0.0
            || self.test < 0.0
        {
            return Err(Error::InvalidConfig(
                "split ratio components must be non-negative and sum to a positive value".into(),
            ));
        }
        let train = ((n as f64) * self.train / total).round() as usize;
        let val = ((n as f64) * self.val / total).round() as usize;
        let (train, val) = (train.min(n), val.min(n - train.min(n)));
        let test = n - train - val;
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::InvalidConfig(format!(
                "split {train}/{val}/{test} of n={n} leaves an empty split"
            )));
        }
        Ok((train, val, test))
    }
}

/// Generate an `n`-record cohort with the default phantom geometry and write
/// the dataset layout (`manifest.csv`, `masks/`, `images/`) under `out_dir`.
pub fn generate_cohort(
    n: usize,
    ratio: SplitRatio,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<CohortManifest> {
    generate_cohort_with(&PhantomParams::default(), n, ratio, seed, out_dir)
}

/// As [`generate_cohort`], with an explicit phantom parameter template. The
/// template's `side` and `angle_theta_deg` are overridden per record: sides
/// alternate left/right, and each record draws its angle uniformly from
/// ±[`PhantomParams::THETA_RANGE_DEG`] using a seed derived from its id.
pub fn generate_cohort_with(
    template: &PhantomParams,
    n: usize,
    ratio: SplitRatio,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<CohortManifest> {
    if n < 3 {
        return Err(Error::InvalidConfig(format!(
            "cohort needs at least 3 records (one per split), got {n}"
        )));
    }
    let (n_train, n_val, _n_test) = ratio.counts(n)?;
    let out_dir = out_dir.as_ref();
    let masks_dir = out_dir.join("masks");
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("p{i:04}");
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        let side = if i % 2 == 0 { Side::Left } else { Side::Right };
        let mut theta_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("theta:{id}")));
        let angle_deg =
            (2.0 * theta_rng.gen::<f64>() - 1.0) * PhantomParams::THETA_RANGE_DEG;
        let params = PhantomParams {
            side,
            angle_theta_deg: angle_deg,
            ..template.clone()
        };
        let (mask, image, centroid) =
            generate_phantom(&params, derive_seed(seed, &format!("phantom:{id}")))?;
        write_mask_pgm(mask_path(out_dir, &id), &mask)?;
        write_gray_pgm(image_path(out_dir, &id), &image)?;
        records.push(ManifestRecord {
            id,
            split,
            side,
            angle_deg,
            centroid,
        });
    }
    let manifest = CohortManifest { records };
    write_manifest(manifest_path(out_dir), &manifest)?;
    Ok(manifest)
}
