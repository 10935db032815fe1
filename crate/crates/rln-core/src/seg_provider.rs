//! Query segmentation sources for the shape-alignment stage.
//!
//! The alignment and refinement stages consume a 4-class label mask Ŝ of the
//! query image. Two interchangeable sources produce it:
//!
//! * **Oracle perturbation** (default): the ground-truth mask degraded by a
//!   small random affine jitter plus boundary label dropout — a stand-in
//!   segmenter with a controllable error level, so the downstream stages can
//!   be exercised and tested without training a segmentation network.
//! * **Toy encoder-decoder** ([`ToyUNet`]): a width-reduced 5-stage U-Net
//!   trained with the combined cross-entropy + Dice objective. The
//!   architecture shape (stage count, skip connections, block composition)
//!   is kept; only the channel widths shrink to desk scale.

use crate::config::derive_seed;
use crate::error::Error;
use crate::imaging::{AffineTransform2D, GrayImage, LabelMask, Point2, NUM_LABELS};
use crate::imaging::resample_mask;
use crate::nnkit::{
    adam_step, concat_channels, concat_channels_backward, conv2d, conv2d_backward,
    conv_weight_init, instance_norm, instance_norm_backward, load_checkpoint, max_pool2,
    pool_backward, relu, relu_backward, save_checkpoint, seg_loss, upsample2, upsample2_backward,
    AdamState, PoolIndices, Scalar, SegLoss, Tensor,
};
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Rotation cap of the oracle's affine jitter, degrees.
pub const ORACLE_ROTATION_CAP_DEG: f64 = 2.0;

/// How the query segmentation is produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProviderMode {
    #[default]
    OraclePerturb,
    ToyUnet,
}

impl ProviderMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oracle_perturb" => Ok(ProviderMode::OraclePerturb),
            "toy_unet" => Ok(ProviderMode::ToyUnet),
            other => Err(Error::InvalidConfig(format!(
                "unknown provider mode '{other}' (expected oracle_perturb or toy_unet)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ProviderMode::OraclePerturb => "oracle_perturb",
            ProviderMode::ToyUnet => "toy_unet",
        }
    }
}

/// Oracle-perturbation knobs.
#[derive(Clone, Debug)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    /// Translation jitter bound, pixels. Zero disables the whole affine
    /// jitter (including rotation), making the perturbation the identity.
    pub perturb_magnitude: f64,
    /// Fraction of foreground boundary pixels flipped to background.
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            mode: ProviderMode::OraclePerturb,
            perturb_magnitude: 3.0,
            dropout_rate: 0.05,
            seed: 0,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.perturb_magnitude >= 0.0) || !self.perturb_magnitude.is_finite() {
            return Err(Error::InvalidConfig(
                "perturb_magnitude must be finite and non-negative".to_string(),
            ));
        }
        if !(self.dropout_rate >= 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::InvalidConfig(
                "dropout_rate must lie in [0, 1)".to_string(),
            ));
        }
        Ok(())
    }
}

/// Degrades a ground-truth mask into a plausible imperfect segmentation:
/// a random affine jitter (translation within ±`magnitude` px per axis,
/// rotation about the grid center within ±2°) followed by flipping each
/// foreground boundary pixel to background with probability `rate`.
/// Deterministic in `(mask, magnitude, rate, seed)`.
pub fn oracle_perturb(
    mask: &LabelMask,
    magnitude: f64,
    rate: f64,
    seed: u64,
) -> Result<LabelMask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Draw unconditionally so the stream layout is independent of the knobs.
    let u_tx: f64 = rng.gen();
    let u_ty: f64 = rng.gen();
    let u_rot: f64 = rng.gen();
    let mut out = if magnitude > 0.0 {
        let tx = magnitude * (2.0 * u_tx - 1.0);
        let ty = magnitude * (2.0 * u_ty - 1.0);
        let rot_deg = ORACLE_ROTATION_CAP_DEG * (2.0 * u_rot - 1.0);
        let center = Point2::new(
            (mask.width() - 1) as f64 / 2.0,
            (mask.height() - 1) as f64 / 2.0,
        );
        let t = AffineTransform2D::compose(
            &AffineTransform2D::translation(tx, ty),
            &AffineTransform2D::rotation_about(rot_deg.to_radians(), center),
        );
        resample_mask(mask, &t, mask.width(), mask.height())?
    } else {
        mask.clone()
    };
    if rate > 0.0 {
        let (w, h) = (out.width(), out.height());
        let snapshot = out.clone();
        for y in 0..h {
            for x in 0..w {
                let label = snapshot.get(x, y);
                if label == 0 || !is_boundary(&snapshot, x, y) {
                    continue;
                }
                if rng.gen::<f64>() < rate {
                    out.set(x, y, 0);
                }
            }
        }
    }
    Ok(out)
}

/// A foreground pixel is a boundary pixel when any 4-neighbor carries a
/// different label (frame edges count as different).
fn is_boundary(mask: &LabelMask, x: usize, y: usize) -> bool {
    let label = mask.get(x, y);
    let (w, h) = (mask.width(), mask.height());
    (x == 0 || mask.get(x - 1, y) != label)
        || (y == 0 || mask.get(x, y - 1) != label)
        || (x + 1 == w || mask.get(x + 1, y) != label)
        || (y + 1 == h || mask.get(x, y + 1) != label)
}

/// Produces the query segmentation from a ground-truth mask per the config.
/// The network mode needs a trained network and an image, so it lives on
/// [`SegmentationProvider`]; requesting it here is a config error.
pub fn provide(ground_truth: &LabelMask, cfg: &ProviderConfig) -> Result<LabelMask> {
    cfg.validate()?;
    match cfg.mode {
        ProviderMode::OraclePerturb => oracle_perturb(
            ground_truth,
            cfg.perturb_magnitude,
            cfg.dropout_rate,
            cfg.seed,
        ),
        ProviderMode::ToyUnet => Err(Error::InvalidConfig(
            "toy_unet mode segments images with a trained network; \
             construct a SegmentationProvider with the network"
                .to_string(),
        )),
    }
}

/// Pipeline-facing segmentation source: dispatches per record, deriving a
/// per-record seed in oracle mode so record order never matters.
pub struct SegmentationProvider {
    cfg: ProviderConfig,
    net: Option<ToyUNet<f32>>,
}

impl SegmentationProvider {
    /// Oracle-mode provider.
    pub fn oracle(cfg: ProviderConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode != ProviderMode::OraclePerturb {
            return Err(Error::InvalidConfig(
                "SegmentationProvider::oracle requires oracle_perturb mode".to_string(),
            ));
        }
        Ok(SegmentationProvider { cfg, net: None })
    }

    /// Network-mode provider wrapping a trained segmenter.
    pub fn from_network(net: ToyUNet<f32>) -> Self {
        SegmentationProvider {
            cfg: ProviderConfig {
                mode: ProviderMode::ToyUnet,
                ..ProviderConfig::default()
            },
            net: Some(net),
        }
    }

    pub fn mode(&self) -> ProviderMode {
        self.cfg.mode
    }

    /// Segments one record. Oracle mode perturbs the ground truth under the
    /// record-specific seed `derive_seed(cfg.seed, "seg:{record_id}")`;
    /// network mode runs the trained segmenter on the image.
    pub fn provide_for(
        &self,
        record_id: &str,
        image: &GrayImage,
        ground_truth: &LabelMask,
    ) -> Result<LabelMask> {
        match self.cfg.mode {
            ProviderMode::OraclePerturb => {
                let seed = derive_seed(self.cfg.seed, &format!("seg:{record_id}"));
                oracle_perturb(
                    ground_truth,
                    self.cfg.perturb_magnitude,
                    self.cfg.dropout_rate,
                    seed,
                )
            }
            ProviderMode::ToyUnet => {
                let net = self.net.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("toy_unet provider has no trained network".to_string())
                })?;
                net.infer_mask(image)
            }
        }
    }
}

/// Encoder widths of the toy segmenter; the decoder mirrors them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyUNetConfig {
    pub encoder_channels: Vec<usize>,
}

impl Default for ToyUNetConfig {
    fn default() -> Self {
        ToyUNetConfig {
            encoder_channels: vec![8, 16, 32, 64, 128],
        }
    }
}

/// Stages in the encoder (last one is the bottleneck); fixed by design.
pub const UNET_STAGES: usize = 5;

impl ToyUNetConfig {
    fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() != UNET_STAGES {
            return Err(Error::InvalidConfig(format!(
                "encoder_channels must list exactly {UNET_STAGES} stages, got {}",
                self.encoder_channels.len()
            )));
        }
        if self.encoder_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig(
                "encoder_channels must all be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Input side lengths must be divisible by this (the encoder pools four
/// times and the decoder doubles back up).
pub const UNET_SIZE_MULTIPLE: usize = 1 << (UNET_STAGES - 1);

const TENSORS_PER_BLOCK: usize = 4;

/// Width-reduced segmentation network: 5 encoder stages of
/// [conv 3×3 → instance norm → ReLU] × 2 with stride-2 max pools between
/// them, a mirrored decoder with nearest-neighbor upsampling and a skip
/// concatenation at every resolution, and a 3×3 conv head to
/// [`NUM_LABELS`] logit channels.
#[derive(Clone, Debug)]
pub struct ToyUNet<T> {
    config: ToyUNetConfig,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> ToyUNet<T> {
    pub fn new(config: ToyUNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Self::allocate(&config, |fan_in, shape| {
            if fan_in == 0 {
                Tensor::zeros(shape)
            } else {
                conv_weight_init(shape[0], shape[1], &mut rng)
            }
        });
        Ok(ToyUNet { config, params })
    }

    fn zeros(config: ToyUNetConfig) -> Result<Self> {
        config.validate()?;
        let params = Self::allocate(&config, |_, shape| Tensor::zeros(shape));
        Ok(ToyUNet { config, params })
    }

    fn allocate(
        config: &ToyUNetConfig,
        mut make: impl FnMut(usize, [usize; 4]) -> Tensor<T>,
    ) -> Vec<Tensor<T>> {
        let ch = &config.encoder_channels;
        let mut params = Vec::new();
        let mut cin = 1;
        for &cout in ch {
            params_push_block(&mut params, &mut make, cin, cout);
            cin = cout;
        }
        // Decoder from the deepest stage up: upsampled deeper features
        // concatenated with the same-resolution encoder skip.
        for j in (0..UNET_STAGES - 1).rev() {
            let cin = ch[j + 1] + ch[j];
            params_push_block(&mut params, &mut make, cin, ch[j]);
        }
        params.push(make(ch[0] * 9, [NUM_LABELS, ch[0], 3, 3]));
        params.push(make(0, [NUM_LABELS, 1, 1, 1]));
        params
    }

    pub fn config(&self) -> &ToyUNetConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Tensor<T>] {
        &self.params
    }

    /// Mutable access to the parameters, in [`Self::parameters`] order.
    /// Tensor shapes must be preserved.
    pub fn parameters_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Gradient of the scalar `g_logits · forward(x)` with respect to every
    /// parameter (a vector-Jacobian product), in [`Self::parameters`] order.
    pub fn parameter_gradients(
        &self,
        x: &Tensor<T>,
        g_logits: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let (_, trace) = self.forward_traced(x)?;
        self.backward(&trace, g_logits)
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.params.len());
        for i in 0..UNET_STAGES {
            for part in ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"] {
                names.push(format!("encoder.stage{i}.{part}"));
            }
        }
        for j in (0..UNET_STAGES - 1).rev() {
            for part in ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"] {
                names.push(format!("decoder.stage{j}.{part}"));
            }
        }
        names.push("head.weight".to_string());
        names.push("head.bias".to_string());
        names
    }

    fn enc_base(&self, stage: usize) -> usize {
        stage * TENSORS_PER_BLOCK
    }

    /// Decoder params for the block producing stage-`j` resolution; blocks
    /// are stored deepest-first.
    fn dec_base(&self, j: usize) -> usize {
        (UNET_STAGES + (UNET_STAGES - 2 - j)) * TENSORS_PER_BLOCK
    }

    fn head_base(&self) -> usize {
        (2 * UNET_STAGES - 1) * TENSORS_PER_BLOCK
    }

    pub fn cast<U: Scalar>(&self) -> ToyUNet<U> {
        ToyUNet {
            config: self.config.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if c != 1 {
            return Err(Error::ShapeMismatch {
                expected: "single-channel image batch".to_string(),
                got: format!("{:?}", x.shape()),
            });
        }
        if h % UNET_SIZE_MULTIPLE != 0 || w % UNET_SIZE_MULTIPLE != 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("image sides divisible by {UNET_SIZE_MULTIPLE}"),
                got: format!("{h}x{w}"),
            });
        }
        // The bottleneck plane must keep ≥2 pixels for instance norm.
        if (h / UNET_SIZE_MULTIPLE) * (w / UNET_SIZE_MULTIPLE) < 2 {
            return Err(Error::ShapeMismatch {
                expected: format!("at least {} pixels per side", 2 * UNET_SIZE_MULTIPLE),
                got: format!("{h}x{w}"),
            });
        }
        Ok(())
    }

    fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, UNetTrace<T>)> {
        self.check_input(x)?;
        let mut skips: Vec<Tensor<T>> = Vec::with_capacity(UNET_STAGES - 1);
        let mut enc_blocks = Vec::with_capacity(UNET_STAGES);
        let mut pools = Vec::with_capacity(UNET_STAGES - 1);
        let mut cur = x.clone();
        for i in 0..UNET_STAGES {
            let base = self.enc_base(i);
            let (out, trace) = block_forward(cur, &self.params[base..base + TENSORS_PER_BLOCK])?;
            enc_blocks.push(trace);
            if i + 1 < UNET_STAGES {
                skips.push(out.clone());
                let (pooled, idx) = max_pool2(&out)?;
                pools.push(idx);
                cur = pooled;
            } else {
                cur = out;
            }
        }
        let mut dec_blocks = Vec::with_capacity(UNET_STAGES - 1);
        let mut concat_channels_first = Vec::with_capacity(UNET_STAGES - 1);
        let mut up_shapes = Vec::with_capacity(UNET_STAGES - 1);
        for j in (0..UNET_STAGES - 1).rev() {
            up_shapes.push(cur.shape());
            let up = upsample2(&cur);
            concat_channels_first.push(up.shape()[1]);
            let merged = concat_channels(&up, &skips[j])?;
            let base = self.dec_base(j);
            let (out, trace) =
                block_forward(merged, &self.params[base..base + TENSORS_PER_BLOCK])?;
            dec_blocks.push(trace);
            cur = out;
        }
        let hb = self.head_base();
        let logits = conv2d(&cur, &self.params[hb], &self.params[hb + 1])?;
        if !logits.all_finite() {
            return Err(Error::NonFinite("segmentation logits".to_string()));
        }
        let head_input = cur;
        Ok((
            logits,
            UNetTrace {
                enc_blocks,
                pools,
                dec_blocks,
                concat_channels_first,
                up_shapes,
                head_input,
            },
        ))
    }

    /// Per-pixel class logits, `[N, NUM_LABELS, H, W]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(x)?.0)
    }

    fn backward(&self, trace: &UNetTrace<T>, g_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut grads: Vec<Tensor<T>> =
            self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let hb = self.head_base();
        let (mut gy, gw, gb) = conv2d_backward(&trace.head_input, &self.params[hb], g_logits)?;
        grads[hb] = gw;
        grads[hb + 1] = gb;

        // Decoder blocks were stored deepest-first; walk them back up,
        // collecting the skip-branch gradient owed to each encoder stage.
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..UNET_STAGES - 1).map(|_| None).collect();
        for (pos, j) in (0..UNET_STAGES - 1).rev().enumerate().rev() {
            let base = self.dec_base(j);
            let g_merged = block_backward(
                &trace.dec_blocks[pos],
                &self.params[base..base + TENSORS_PER_BLOCK],
                &gy,
                &mut grads,
                base,
            )?;
            let (g_up, g_skip) =
                concat_channels_backward(trace.concat_channels_first[pos], &g_merged)?;
            skip_grads[j] = Some(g_skip);
            gy = upsample2_backward(trace.up_shapes[pos], &g_up)?;
        }

        // Encoder: the bottleneck's output gradient arrives from the deepest
        // upsample; shallower stages add their skip share after unpooling.
        for i in (0..UNET_STAGES).rev() {
            if i + 1 < UNET_STAGES {
                let mut unpooled = pool_backward(&trace.pools[i], &gy)?;
                if let Some(gs) = &skip_grads[i] {
                    add_into(&mut unpooled, gs);
                }
                gy = unpooled;
            }
            let base = self.enc_base(i);
            gy = block_backward(
                &trace.enc_blocks[i],
                &self.params[base..base + TENSORS_PER_BLOCK],
                &gy,
                &mut grads,
                base,
            )?;
        }
        Ok(grads)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let named: Vec<(String, Tensor<f32>)> = self
            .parameter_names()
            .into_iter()
            .zip(self.params.iter().map(|p| p.cast::<f32>()))
            .collect();
        save_checkpoint(path, &named)
    }
}

impl ToyUNet<f32> {
    /// Segments one image: forward pass plus per-pixel argmax (ties go to
    /// the lowest class index).
    pub fn infer_mask(&self, image: &GrayImage) -> Result<LabelMask> {
        let x = images_to_tensor::<f32>(std::slice::from_ref(image))?;
        let logits = self.forward(&x)?;
        let (w, h) = (image.width(), image.height());
        let mut mask = LabelMask::zeros(w, h);
        for y in 0..h {
            for x_px in 0..w {
                let mut best = 0u8;
                let mut best_v = logits.at(0, 0, y, x_px);
                for c in 1..NUM_LABELS {
                    let v = logits.at(0, c, y, x_px);
                    if v > best_v {
                        best_v = v;
                        best = c as u8;
                    }
                }
                mask.set(x_px, y, best);
            }
        }
        Ok(mask)
    }

    /// Loads a checkpoint saved by [`ToyUNet::save`], inferring the encoder
    /// widths from the stored shapes.
    pub fn load(path: &Path) -> Result<ToyUNet<f32>> {
        let named = load_checkpoint(path)?;
        let mut map: std::collections::HashMap<String, Tensor<f32>> = named.into_iter().collect();
        let mut encoder_channels = Vec::new();
        for i in 0..UNET_STAGES {
            let name = format!("encoder.stage{i}.conv1.weight");
            let w = map
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            encoder_channels.push(w.shape()[0]);
        }
        let config = ToyUNetConfig { encoder_channels };
        let mut net = ToyUNet::<f32>::zeros(config)?;
        let names = net.parameter_names();
        for (i, name) in names.iter().enumerate() {
            let t = map
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != net.params[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    net.params[i].shape()
                )));
            }
            net.params[i] = t;
        }
        if let Some(name) = map.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
        }
        Ok(net)
    }
}

struct UNetTrace<T> {
    enc_blocks: Vec<BlockTrace<T>>,
    pools: Vec<PoolIndices>,
    /// Deepest-first, parallel to `dec_blocks`.
    dec_blocks: Vec<BlockTrace<T>>,
    concat_channels_first: Vec<usize>,
    up_shapes: Vec<[usize; 4]>,
    head_input: Tensor<T>,
}

struct BlockTrace<T> {
    x: Tensor<T>,
    y1: Tensor<T>,
    n1: Tensor<T>,
    r1: Tensor<T>,
    y2: Tensor<T>,
    n2: Tensor<T>,
}

fn params_push_block<T: Scalar>(
    params: &mut Vec<Tensor<T>>,
    make: &mut impl FnMut(usize, [usize; 4]) -> Tensor<T>,
    cin: usize,
    cout: usize,
) {
    params.push(make(cin * 9, [cout, cin, 3, 3]));
    params.push(make(0, [cout, 1, 1, 1]));
    params.push(make(cout * 9, [cout, cout, 3, 3]));
    params.push(make(0, [cout, 1, 1, 1]));
}

fn block_forward<T: Scalar>(x: Tensor<T>, p: &[Tensor<T>]) -> Result<(Tensor<T>, BlockTrace<T>)> {
    let y1 = conv2d(&x, &p[0], &p[1])?;
    let n1 = instance_norm(&y1)?;
    let r1 = relu(&n1);
    let y2 = conv2d(&r1, &p[2], &p[3])?;
    let n2 = instance_norm(&y2)?;
    let r2 = relu(&n2);
    Ok((
        r2,
        BlockTrace {
            x,
            y1,
            n1,
            r1,
            y2,
            n2,
        },
    ))
}

fn block_backward<T: Scalar>(
    trace: &BlockTrace<T>,
    p: &[Tensor<T>],
    gy: &Tensor<T>,
    grads: &mut [Tensor<T>],
    base: usize,
) -> Result<Tensor<T>> {
    let gn2 = relu_backward(&trace.n2, gy)?;
    let gy2 = instance_norm_backward(&trace.y2, &gn2)?;
    let (gr1, gw2, gb2) = conv2d_backward(&trace.r1, &p[2], &gy2)?;
    add_into(&mut grads[base + 2], &gw2);
    add_into(&mut grads[base + 3], &gb2);
    let gn1 = relu_backward(&trace.n1, &gr1)?;
    let gy1 = instance_norm_backward(&trace.y1, &gn1)?;
    let (gx, gw1, gb1) = conv2d_backward(&trace.x, &p[0], &gy1)?;
    add_into(&mut grads[base], &gw1);
    add_into(&mut grads[base + 1], &gb1);
    Ok(gx)
}

fn add_into<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

/// Stacks equally-sized images into an `[N, 1, H, W]` batch tensor.
pub fn images_to_tensor<T: Scalar>(images: &[GrayImage]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::EmptyDataset)?;
    let (w, h) = (first.width(), first.height());
    let mut t = Tensor::zeros([images.len(), 1, h, w]);
    for (i, img) in images.iter().enumerate() {
        if img.width() != w || img.height() != h {
            return Err(Error::ShapeMismatch {
                expected: format!("{w}x{h} image"),
                got: format!("{}x{}", img.width(), img.height()),
            });
        }
        let start = t.offset(i, 0, 0, 0);
        for (dst, &src) in t.data_mut()[start..start + w * h].iter_mut().zip(img.data()) {
            *dst = T::from_f64(src as f64);
        }
    }
    Ok(t)
}

/// Flattens equally-sized label masks into the `[N·H·W]` layout the
/// segmentation loss expects.
pub fn masks_to_labels(masks: &[LabelMask]) -> Result<Vec<u8>> {
    let first = masks.first().ok_or(Error::EmptyDataset)?;
    let (w, h) = (first.width(), first.height());
    let mut labels = Vec::with_capacity(masks.len() * w * h);
    for m in masks {
        if m.width() != w || m.height() != h {
            return Err(Error::ShapeMismatch {
                expected: format!("{w}x{h} mask"),
                got: format!("{}x{}", m.width(), m.height()),
            });
        }
        labels.extend_from_slice(m.data());
    }
    Ok(labels)
}

/// Segmentation training hyper-parameters.
#[derive(Clone, Debug)]
pub struct SegTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Multiplicative learning-rate decay applied every epoch.
    pub decay: f64,
    pub seed: u64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            lr: 3e-4,
            batch: 16,
            epochs: 20,
            decay: 0.9,
            seed: 0,
        }
    }
}

impl SegTrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".to_string()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".to_string()));
        }
        if self.epochs == 0 || self.epochs > 100 {
            return Err(Error::InvalidConfig(
                "epochs must lie in 1..=100 at desk scale".to_string(),
            ));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidConfig("decay must lie in (0, 1]".to_string()));
        }
        Ok(())
    }
}

/// Per-epoch mean losses of a segmentation training run.
#[derive(Clone, Debug, Default)]
pub struct SegHistory {
    pub total: Vec<f64>,
    pub cross_entropy: Vec<f64>,
    pub dice: Vec<f64>,
}

/// Trains the toy segmenter with Adam on the combined cross-entropy + Dice
/// loss; the learning rate decays by `cfg.decay` each epoch. Deterministic
/// per seed.
pub fn train_toy_unet(
    dataset: &[(GrayImage, LabelMask)],
    net_cfg: &ToyUNetConfig,
    cfg: &SegTrainConfig,
) -> Result<(ToyUNet<f32>, SegHistory)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let mut net = ToyUNet::<f32>::new(net_cfg.clone(), derive_seed(cfg.seed, "seg-init"))?;
    let mut adam = AdamState::new(cfg.lr, &net.params);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "seg-data"));
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = SegHistory::default();

    for epoch in 0..cfg.epochs {
        adam.lr = cfg.lr * cfg.decay.powi(epoch as i32);
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut sums = SegLoss::default();
        for chunk in order.chunks(cfg.batch) {
            let images: Vec<GrayImage> =
                chunk.iter().map(|&i| dataset[i].0.clone()).collect();
            let masks: Vec<LabelMask> = chunk.iter().map(|&i| dataset[i].1.clone()).collect();
            let x = images_to_tensor::<f32>(&images)?;
            let labels = masks_to_labels(&masks)?;
            let (logits, trace) = net.forward_traced(&x)?;
            let (loss, g_logits) = seg_loss(&logits, &labels)?;
            let weight = chunk.len() as f64 / n as f64;
            sums.total += loss.total * weight;
            sums.cross_entropy += loss.cross_entropy * weight;
            sums.dice += loss.dice * weight;
            let grads = net.backward(&trace, &g_logits)?;
            adam_step(&mut net.params, &grads, &mut adam)?;
        }
        history.total.push(sums.total);
        history.cross_entropy.push(sums.cross_entropy);
        history.dice.push(sums.dice);
    }
    Ok((net, history))
}
