//! Dual-path patch refinement network ("Locate-Net").
//!
//! A 64×64 global patch and a 24×24 local patch, both centered on the
//! candidate point, pass through one weight-shared convolutional stack
//! (three blocks of [conv 3×3 → instance norm → ReLU] × 2). The global path
//! max-pools after every block (64→32→16→8), the local path after the first
//! two only (24→12→6); an adaptive max pool maps each path to a fixed 4×4
//! grid so they can be channel-concatenated. Two further conv blocks fuse
//! the paths, and three fully-connected layers (512 → 64 → 2) regress the
//! centroid offset. The final layer is zero-initialized, so an untrained
//! network predicts a zero offset and refinement degrades gracefully to the
//! candidate itself.

use crate::config::derive_seed;
use crate::error::Error;
use crate::imaging::{crop_patch, GrayImage, Point2};
use crate::nnkit::{
    adam_step, adaptive_max_pool, concat_channels, concat_channels_backward, conv2d,
    conv2d_backward, conv_weight_init, instance_norm, instance_norm_backward, linear,
    linear_backward, linear_weight_init, load_checkpoint, max_pool2, pool_backward, relu,
    relu_backward, save_checkpoint, smooth_l1_form, AdamState, PoolIndices, Scalar, SmoothL1Form,
    Tensor,
};
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Side length of the global context patch.
pub const GLOBAL_PATCH: usize = 64;
/// Side length of the local detail patch.
pub const LOCAL_PATCH: usize = 24;
/// Hidden units of the two fully-connected layers before the 2-unit output.
pub const FC_HIDDEN: [usize; 2] = [512, 64];

const TENSORS_PER_BLOCK: usize = 4; // conv1.weight, conv1.bias, conv2.weight, conv2.bias
const FUSION_BLOCKS: usize = 2;

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocateNetConfig {
    /// Output channels of the shared stack's blocks (first block reads the
    /// 1-channel patch).
    pub block_channels: Vec<usize>,
    /// Side of the adaptive pooling grid both paths are re-scaled to.
    pub pool_grid: usize,
}

impl Default for LocateNetConfig {
    fn default() -> Self {
        LocateNetConfig {
            block_channels: vec![32, 64, 128],
            pool_grid: 4,
        }
    }
}

impl LocateNetConfig {
    fn validate(&self) -> Result<()> {
        let b = self.block_channels.len();
        if b == 0 {
            return Err(Error::InvalidConfig(
                "block_channels must not be empty".to_string(),
            ));
        }
        if self.block_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig(
                "block_channels must all be positive".to_string(),
            ));
        }
        if self.pool_grid < 2 {
            return Err(Error::InvalidConfig(
                "pool_grid must be at least 2".to_string(),
            ));
        }
        let global_final = GLOBAL_PATCH >> b;
        let local_final = LOCAL_PATCH >> (b - 1);
        if global_final < self.pool_grid || local_final < self.pool_grid {
            return Err(Error::InvalidConfig(format!(
                "{b} blocks leave a {global_final}x{global_final} global / \
                 {local_final}x{local_final} local plane, smaller than the \
                 {0}x{0} pooling grid",
                self.pool_grid
            )));
        }
        Ok(())
    }

    fn last_channels(&self) -> usize {
        *self.block_channels.last().expect("validated non-empty")
    }

    fn flat_features(&self) -> usize {
        self.last_channels() * self.pool_grid * self.pool_grid
    }
}

/// Which path(s) feed the fusion stage. Single-path modes zero the other
/// path's pooled features (the ablation settings).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PathMode {
    #[default]
    Dual,
    LocalOnly,
    GlobalOnly,
}

impl PathMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(PathMode::Dual),
            "local" => Ok(PathMode::LocalOnly),
            "global" => Ok(PathMode::GlobalOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown path mode '{other}' (expected dual, local, or global)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PathMode::Dual => "dual",
            PathMode::LocalOnly => "local",
            PathMode::GlobalOnly => "global",
        }
    }

    fn code(&self) -> f32 {
        match self {
            PathMode::Dual => 0.0,
            PathMode::LocalOnly => 1.0,
            PathMode::GlobalOnly => 2.0,
        }
    }

    fn from_code(code: f32) -> Result<Self> {
        match code as i64 {
            0 => Ok(PathMode::Dual),
            1 => Ok(PathMode::LocalOnly),
            2 => Ok(PathMode::GlobalOnly),
            other => Err(Error::Checkpoint(format!("unknown path-mode code {other}"))),
        }
    }
}

/// The network: one shared conv stack (used by both paths), two fusion
/// blocks, three FC layers. Parameters live in a flat list whose layout is
/// fixed by [`LocateNet::parameter_names`].
#[derive(Clone, Debug)]
pub struct LocateNet<T> {
    config: LocateNetConfig,
    mode: PathMode,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> LocateNet<T> {
    /// Seeded Kaiming initialization; the final FC layer starts at zero so a
    /// fresh network predicts the (0, 0) offset.
    pub fn new(config: LocateNetConfig, mode: PathMode, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Self::allocate(&config, |fan_in, shape| {
            if fan_in == 0 {
                Tensor::zeros(shape)
            } else if shape[2] == 3 {
                conv_weight_init(shape[0], shape[1], &mut rng)
            } else {
                linear_weight_init(shape[0], shape[1], &mut rng)
            }
        });
        Ok(LocateNet {
            config,
            mode,
            params,
        })
    }

    /// All-zero parameters (used when loading a checkpoint into place).
    fn zeros(config: LocateNetConfig, mode: PathMode) -> Result<Self> {
        config.validate()?;
        let params = Self::allocate(&config, |_, shape| Tensor::zeros(shape));
        Ok(LocateNet {
            config,
            mode,
            params,
        })
    }

    /// Walks the fixed parameter layout, calling `make(fan_in, shape)` for
    /// every tensor. `fan_in == 0` requests a zero tensor (biases, zero
    /// head).
    fn allocate(
        config: &LocateNetConfig,
        mut make: impl FnMut(usize, [usize; 4]) -> Tensor<T>,
    ) -> Vec<Tensor<T>> {
        let mut params = Vec::new();
        let mut push_block = |make: &mut dyn FnMut(usize, [usize; 4]) -> Tensor<T>,
                              cin: usize,
                              cout: usize| {
            params_push_block(&mut params, make, cin, cout);
        };
        let mut cin = 1;
        for &cout in &config.block_channels {
            push_block(&mut make, cin, cout);
            cin = cout;
        }
        let c = config.last_channels();
        push_block(&mut make, 2 * c, c);
        push_block(&mut make, c, c);
        let mut fc_in = config.flat_features();
        for &units in &FC_HIDDEN {
            params.push(make(fc_in, [units, fc_in, 1, 1]));
            params.push(make(0, [units, 1, 1, 1]));
            fc_in = units;
        }
        // Output layer: zero weights and bias.
        params.push(make(0, [2, fc_in, 1, 1]));
        params.push(make(0, [2, 1, 1, 1]));
        params
    }

    pub fn config(&self) -> &LocateNetConfig {
        &self.config
    }

    pub fn mode(&self) -> PathMode {
        self.mode
    }

    pub fn parameters(&self) -> &[Tensor<T>] {
        &self.params
    }

    /// Mutable access to the parameters, in [`Self::parameters`] order.
    /// Tensor shapes must be preserved.
    pub fn parameters_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Gradient of the scalar `g_out · forward(global, local)` with respect
    /// to every parameter (a vector-Jacobian product), in
    /// [`Self::parameters`] order.
    pub fn parameter_gradients(
        &self,
        global_patches: &Tensor<T>,
        local_patches: &Tensor<T>,
        g_out: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let (_, trace) = self.forward_traced(global_patches, local_patches)?;
        self.backward(&trace, g_out)
    }

    /// Names matching the parameter layout, one per tensor.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.params.len());
        for i in 0..self.config.block_channels.len() {
            for part in ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"] {
                names.push(format!("stack.block{i}.{part}"));
            }
        }
        for i in 0..FUSION_BLOCKS {
            for part in ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"] {
                names.push(format!("fusion.block{i}.{part}"));
            }
        }
        for i in 1..=3 {
            names.push(format!("fc{i}.weight"));
            names.push(format!("fc{i}.bias"));
        }
        names
    }

    fn stack_base(&self, block: usize) -> usize {
        block * TENSORS_PER_BLOCK
    }

    fn fusion_base(&self, block: usize) -> usize {
        (self.config.block_channels.len() + block) * TENSORS_PER_BLOCK
    }

    fn fc_base(&self, layer: usize) -> usize {
        (self.config.block_channels.len() + FUSION_BLOCKS) * TENSORS_PER_BLOCK + 2 * layer
    }

    /// Casts every parameter to another precision (gradient-check mode).
    pub fn cast<U: Scalar>(&self) -> LocateNet<U> {
        LocateNet {
            config: self.config.clone(),
            mode: self.mode,
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    /// Pooling schedule for one path: the global path pools after every
    /// block, the local path after all but the last.
    fn pools_after(&self, global: bool) -> Vec<bool> {
        let b = self.config.block_channels.len();
        (0..b).map(|i| global || i + 1 < b).collect()
    }

    fn path_forward(&self, input: Tensor<T>, global: bool) -> Result<(Tensor<T>, PathTrace<T>)> {
        let pools_after = self.pools_after(global);
        let mut x = input;
        let mut blocks = Vec::new();
        let mut pools = Vec::new();
        for (i, &pool) in pools_after.iter().enumerate() {
            let base = self.stack_base(i);
            let (r2, trace) = block_forward(x, &self.params[base..base + TENSORS_PER_BLOCK])?;
            blocks.push(trace);
            x = if pool {
                let (pooled, idx) = max_pool2(&r2)?;
                pools.push(idx);
                pooled
            } else {
                r2
            };
        }
        let (pooled, adaptive) = adaptive_max_pool(&x, self.config.pool_grid)?;
        Ok((
            pooled,
            PathTrace {
                blocks,
                pools,
                adaptive,
                pools_after,
            },
        ))
    }

    fn path_backward(
        &self,
        trace: &PathTrace<T>,
        g_pooled: &Tensor<T>,
        grads: &mut [Tensor<T>],
    ) -> Result<()> {
        let mut gy = pool_backward(&trace.adaptive, g_pooled)?;
        let mut pool_pos = trace.pools.len();
        for i in (0..trace.blocks.len()).rev() {
            if trace.pools_after[i] {
                pool_pos -= 1;
                gy = pool_backward(&trace.pools[pool_pos], &gy)?;
            }
            let base = self.stack_base(i);
            gy = block_backward(
                &trace.blocks[i],
                &self.params[base..base + TENSORS_PER_BLOCK],
                &gy,
                grads,
                base,
            )?;
        }
        Ok(())
    }

    /// Forward pass with the intermediate activations needed for backward.
    fn forward_traced(
        &self,
        global_patches: &Tensor<T>,
        local_patches: &Tensor<T>,
    ) -> Result<(Tensor<T>, NetTrace<T>)> {
        let [n, gc, gh, gw] = global_patches.shape();
        let [ln, lc, lh, lw] = local_patches.shape();
        if gc != 1 || gh != GLOBAL_PATCH || gw != GLOBAL_PATCH {
            return Err(Error::ShapeMismatch {
                expected: format!("global patches [N, 1, {GLOBAL_PATCH}, {GLOBAL_PATCH}]"),
                got: format!("{:?}", global_patches.shape()),
            });
        }
        if ln != n || lc != 1 || lh != LOCAL_PATCH || lw != LOCAL_PATCH {
            return Err(Error::ShapeMismatch {
                expected: format!("local patches [{n}, 1, {LOCAL_PATCH}, {LOCAL_PATCH}]"),
                got: format!("{:?}", local_patches.shape()),
            });
        }
        let c = self.config.last_channels();
        let g = self.config.pool_grid;

        let (global_pooled, global_trace) = match self.mode {
            PathMode::LocalOnly => (Tensor::zeros([n, c, g, g]), None),
            _ => {
                let (pooled, trace) = self.path_forward(global_patches.clone(), true)?;
                (pooled, Some(trace))
            }
        };
        let (local_pooled, local_trace) = match self.mode {
            PathMode::GlobalOnly => (Tensor::zeros([n, c, g, g]), None),
            _ => {
                let (pooled, trace) = self.path_forward(local_patches.clone(), false)?;
                (pooled, Some(trace))
            }
        };

        let concat = concat_channels(&global_pooled, &local_pooled)?;
        let fb = self.fusion_base(0);
        let (f0_out, fusion0) = block_forward(concat, &self.params[fb..fb + TENSORS_PER_BLOCK])?;
        let fb1 = self.fusion_base(1);
        let (f1_out, fusion1) = block_forward(f0_out, &self.params[fb1..fb1 + TENSORS_PER_BLOCK])?;
        let flat = f1_out.reshape([n, self.config.flat_features(), 1, 1])?;

        let (w1, b1) = (&self.params[self.fc_base(0)], &self.params[self.fc_base(0) + 1]);
        let z1 = linear(&flat, w1, b1)?;
        let a1 = relu(&z1);
        let (w2, b2) = (&self.params[self.fc_base(1)], &self.params[self.fc_base(1) + 1]);
        let z2 = linear(&a1, w2, b2)?;
        let a2 = relu(&z2);
        let (w3, b3) = (&self.params[self.fc_base(2)], &self.params[self.fc_base(2) + 1]);
        let out = linear(&a2, w3, b3)?;
        if !out.all_finite() {
            return Err(Error::NonFinite("refinement network output".to_string()));
        }
        Ok((
            out,
            NetTrace {
                global_trace,
                local_trace,
                fusion0,
                fusion1,
                flat,
                z1,
                a1,
                z2,
                a2,
            },
        ))
    }

    /// Predicted (Δx, Δy) offsets, one row per sample: output `[N, 2, 1, 1]`.
    pub fn forward(
        &self,
        global_patches: &Tensor<T>,
        local_patches: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        Ok(self.forward_traced(global_patches, local_patches)?.0)
    }

    /// Backward pass: gradient of a scalar loss w.r.t. every parameter given
    /// `g_out` = ∂loss/∂output. Input-image gradients are discarded.
    fn backward(&self, trace: &NetTrace<T>, g_out: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();

        let w3 = &self.params[self.fc_base(2)];
        let (g_a2, gw3, gb3) = linear_backward(&trace.a2, w3, g_out)?;
        grads[self.fc_base(2)] = gw3;
        grads[self.fc_base(2) + 1] = gb3;
        let g_z2 = relu_backward(&trace.z2, &g_a2)?;
        let w2 = &self.params[self.fc_base(1)];
        let (g_a1, gw2, gb2) = linear_backward(&trace.a1, w2, &g_z2)?;
        grads[self.fc_base(1)] = gw2;
        grads[self.fc_base(1) + 1] = gb2;
        let g_z1 = relu_backward(&trace.z1, &g_a1)?;
        let w1 = &self.params[self.fc_base(0)];
        let (g_flat, gw1, gb1) = linear_backward(&trace.flat, w1, &g_z1)?;
        grads[self.fc_base(0)] = gw1;
        grads[self.fc_base(0) + 1] = gb1;

        let [n, _, _, _] = g_out.shape();
        let c = self.config.last_channels();
        let g = self.config.pool_grid;
        let g_fused = g_flat.reshape([n, c, g, g])?;
        let fb1 = self.fusion_base(1);
        let g_f0 = block_backward(
            &trace.fusion1,
            &self.params[fb1..fb1 + TENSORS_PER_BLOCK],
            &g_fused,
            &mut grads,
            fb1,
        )?;
        let fb0 = self.fusion_base(0);
        let g_concat = block_backward(
            &trace.fusion0,
            &self.params[fb0..fb0 + TENSORS_PER_BLOCK],
            &g_f0,
            &mut grads,
            fb0,
        )?;
        let (g_global, g_local) = concat_channels_backward(c, &g_concat)?;
        if let Some(t) = &trace.global_trace {
            self.path_backward(t, &g_global, &mut grads)?;
        }
        if let Some(t) = &trace.local_trace {
            self.path_backward(t, &g_local, &mut grads)?;
        }
        Ok(grads)
    }

    /// Saves all parameters plus `meta.mode` / `meta.pool_grid` marker
    /// tensors to the flat binary checkpoint format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut named: Vec<(String, Tensor<f32>)> = self
            .parameter_names()
            .into_iter()
            .zip(self.params.iter().map(|p| p.cast::<f32>()))
            .collect();
        named.push((
            "meta.mode".to_string(),
            Tensor::from_vec([1, 1, 1, 1], vec![self.mode.code()])?,
        ));
        named.push((
            "meta.pool_grid".to_string(),
            Tensor::from_vec([1, 1, 1, 1], vec![self.config.pool_grid as f32])?,
        ));
        save_checkpoint(path, &named)
    }
}

impl LocateNet<f32> {
    /// Loads a checkpoint, inferring the architecture from tensor shapes and
    /// the `meta.*` markers, and validating completeness.
    pub fn load(path: &Path) -> Result<LocateNet<f32>> {
        let named = load_checkpoint(path)?;
        let mut map: std::collections::HashMap<String, Tensor<f32>> = named.into_iter().collect();
        let mode_t = map
            .remove("meta.mode")
            .ok_or_else(|| Error::Checkpoint("missing meta.mode tensor".to_string()))?;
        let mode = PathMode::from_code(mode_t.data()[0])?;
        let grid_t = map
            .remove("meta.pool_grid")
            .ok_or_else(|| Error::Checkpoint("missing meta.pool_grid tensor".to_string()))?;
        let pool_grid = grid_t.data()[0] as usize;

        let mut block_channels = Vec::new();
        while let Some(w) = map.get(&format!("stack.block{}.conv1.weight", block_channels.len())) {
            block_channels.push(w.shape()[0]);
        }
        if block_channels.is_empty() {
            return Err(Error::Checkpoint(
                "checkpoint contains no shared-stack blocks".to_string(),
            ));
        }
        let config = LocateNetConfig {
            block_channels,
            pool_grid,
        };
        let mut net = LocateNet::<f32>::zeros(config, mode)?;
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

fn params_push_block<T: Scalar>(
    params: &mut Vec<Tensor<T>>,
    make: &mut dyn FnMut(usize, [usize; 4]) -> Tensor<T>,
    cin: usize,
    cout: usize,
) {
    params.push(make(cin * 9, [cout, cin, 3, 3]));
    params.push(make(0, [cout, 1, 1, 1]));
    params.push(make(cout * 9, [cout, cout, 3, 3]));
    params.push(make(0, [cout, 1, 1, 1]));
}

/// Intermediates of one conv block needed by its backward pass.
struct BlockTrace<T> {
    x: Tensor<T>,
    y1: Tensor<T>,
    n1: Tensor<T>,
    r1: Tensor<T>,
    y2: Tensor<T>,
    n2: Tensor<T>,
}

struct PathTrace<T> {
    blocks: Vec<BlockTrace<T>>,
    pools: Vec<PoolIndices>,
    adaptive: PoolIndices,
    pools_after: Vec<bool>,
}

struct NetTrace<T> {
    global_trace: Option<PathTrace<T>>,
    local_trace: Option<PathTrace<T>>,
    fusion0: BlockTrace<T>,
    fusion1: BlockTrace<T>,
    flat: Tensor<T>,
    z1: Tensor<T>,
    a1: Tensor<T>,
    z2: Tensor<T>,
    a2: Tensor<T>,
}

/// [conv → instance norm → ReLU] × 2. Params slice: w1, b1, w2, b2.
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

/// Backward of [`block_forward`]; accumulates parameter gradients into
/// `grads[base..base+4]` and returns the gradient w.r.t. the block input.
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

/// Stacks equally-sized single-channel patches into a `[N, 1, s, s]` batch.
pub fn patches_to_tensor<T: Scalar>(patches: &[GrayImage], size: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros([patches.len(), 1, size, size]);
    for (i, p) in patches.iter().enumerate() {
        if p.width() != size || p.height() != size {
            return Err(Error::ShapeMismatch {
                expected: format!("{size}x{size} patch"),
                got: format!("{}x{}", p.width(), p.height()),
            });
        }
        let start = t.offset(i, 0, 0, 0);
        for (dst, &src) in t.data_mut()[start..start + size * size]
            .iter_mut()
            .zip(p.data())
        {
            *dst = T::from_f64(src as f64);
        }
    }
    Ok(t)
}

/// Crops the two patches at `candidate`, runs the network, and returns the
/// candidate shifted by the predicted offset, clamped to the frame.
pub fn refine(image: &GrayImage, candidate: Point2, net: &LocateNet<f32>) -> Result<Point2> {
    let (w, h) = (image.width(), image.height());
    let cand = candidate.clamped(w, h);
    let global = crop_patch(image, cand, GLOBAL_PATCH)?;
    let local = crop_patch(image, cand, LOCAL_PATCH)?;
    let gt = patches_to_tensor::<f32>(&[global], GLOBAL_PATCH)?;
    let lt = patches_to_tensor::<f32>(&[local], LOCAL_PATCH)?;
    let out = net.forward(&gt, &lt)?;
    let refined = Point2::new(
        cand.x + out.at(0, 0, 0, 0) as f64,
        cand.y + out.at(0, 1, 0, 0) as f64,
    );
    Ok(refined.clamped(w, h))
}

/// Training hyper-parameters for the refinement network.
#[derive(Clone, Debug)]
pub struct RefineTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Radius of the uniform disk the training candidates are jittered in.
    pub jitter_radius: f64,
    pub seed: u64,
    pub loss_form: SmoothL1Form,
}

impl Default for RefineTrainConfig {
    fn default() -> Self {
        RefineTrainConfig {
            lr: 1e-3,
            batch: 16,
            epochs: 60,
            jitter_radius: 10.0,
            seed: 0,
            loss_form: SmoothL1Form::Joint,
        }
    }
}

impl RefineTrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".to_string()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".to_string()));
        }
        if !(self.jitter_radius >= 0.0) {
            return Err(Error::InvalidConfig(
                "jitter radius must be non-negative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Trains a [`LocateNet`] on (image, true centroid) pairs.
///
/// Candidates are simulated by jittering each true centroid uniformly in a
/// disk of `jitter_radius` pixels (fresh per epoch); the regression target
/// is the true offset from the jittered candidate and the loss is the
/// selected smooth-L1 form summed over each batch. Returns the trained
/// network and the per-epoch mean per-sample loss history.
pub fn train_locate_net(
    dataset: &[(GrayImage, Point2)],
    net_config: &LocateNetConfig,
    cfg: &RefineTrainConfig,
    mode: PathMode,
) -> Result<(LocateNet<f32>, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let mut net = LocateNet::<f32>::new(
        net_config.clone(),
        mode,
        derive_seed(cfg.seed, "refine-init"),
    )?;
    let mut adam = AdamState::new(cfg.lr, &net.params);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "refine-data"));
    let beta = 1.0f32;
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for _epoch in 0..cfg.epochs {
        // Fisher–Yates with our own RNG keeps the permutation reproducible.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch) {
            let mut globals = Vec::with_capacity(chunk.len());
            let mut locals = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let (image, truth) = &dataset[idx];
                // Uniform in a disk: r = R√u, angle = 2πv. The candidate is
                // snapped to the integer crop lattice so the regression
                // target matches the content the network actually sees —
                // cropping quantizes the center, and a sub-pixel mismatch
                // between crop and target would put an irreducible floor
                // under the training loss.
                let u: f64 = rng.gen();
                let v: f64 = rng.gen();
                let r = cfg.jitter_radius * u.sqrt();
                let angle = 2.0 * std::f64::consts::PI * v;
                let candidate = Point2::new(
                    (truth.x + r * angle.cos()).round(),
                    (truth.y + r * angle.sin()).round(),
                )
                .clamped(image.width(), image.height());
                globals.push(crop_patch(image, candidate, GLOBAL_PATCH)?);
                locals.push(crop_patch(image, candidate, LOCAL_PATCH)?);
                targets.push((truth.x - candidate.x, truth.y - candidate.y));
            }
            let gt = patches_to_tensor::<f32>(&globals, GLOBAL_PATCH)?;
            let lt = patches_to_tensor::<f32>(&locals, LOCAL_PATCH)?;
            let (out, trace) = net.forward_traced(&gt, &lt)?;
            let mut g_out = Tensor::zeros(out.shape());
            for (i, &(tx, ty)) in targets.iter().enumerate() {
                let dx = out.at(i, 0, 0, 0) - tx as f32;
                let dy = out.at(i, 1, 0, 0) - ty as f32;
                let (value, grad) = smooth_l1_form(cfg.loss_form, dx, dy, beta);
                epoch_loss += value as f64;
                *g_out.at_mut(i, 0, 0, 0) = grad[0];
                *g_out.at_mut(i, 1, 0, 0) = grad[1];
            }
            let grads = net.backward(&trace, &g_out)?;
            adam_step(&mut net.params, &grads, &mut adam)?;
        }
        history.push(epoch_loss / n as f64);
    }
    Ok((net, history))
}
