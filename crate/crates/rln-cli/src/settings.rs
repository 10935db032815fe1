//! Resolution of runtime knobs from three layers: subcommand flags override
//! config-file entries, which override built-in defaults. All randomness
//! flows from one master seed through named sub-seeds, so each stage is
//! independently reproducible.

use std::path::PathBuf;

use anyhow::{Context, Result};
use rln_core::bsa::BsaConfig;
use rln_core::config::{derive_seed, ConfigMap};
use rln_core::eval::{EvalConfig, NeighborhoodNorm};
use rln_core::pipeline::PipelineConfig;
use rln_core::seg_provider::{ProviderConfig, ProviderMode};

/// Named sub-seed for cohort synthesis.
pub const SEED_SYNTH: &str = "seed:synth";
/// Named sub-seed for the segmentation provider.
pub const SEED_SEG: &str = "seed:seg";
/// Named sub-seed for registration restarts.
pub const SEED_REG: &str = "seed:reg";
/// Named sub-seed for segmenter training.
pub const SEED_TRAIN_SEG: &str = "seed:train-seg";
/// Named sub-seed for refiner training.
pub const SEED_TRAIN_REFINE: &str = "seed:train-refine";

/// Global context every subcommand runs under.
pub struct Ctx {
    pub cfg: ConfigMap,
    /// Master seed; stages derive their own seeds from it by name.
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Ctx {
    pub fn new(seed: Option<u64>, config: Option<PathBuf>, out_dir: Option<PathBuf>) -> Result<Self> {
        let cfg = match &config {
            Some(path) => ConfigMap::load(path)
                .with_context(|| format!("loading config file {}", path.display()))?,
            None => ConfigMap::new(),
        };
        let seed = match seed {
            Some(s) => s,
            None => cfg.get_u64("seed")?.unwrap_or(42),
        };
        let out_dir = match out_dir {
            Some(d) => d,
            None => PathBuf::from(cfg.get("out_dir").unwrap_or("out")),
        };
        Ok(Ctx { cfg, seed, out_dir })
    }

    pub fn sub_seed(&self, name: &str) -> u64 {
        derive_seed(self.seed, name)
    }

    pub fn usize(&self, key: &str, flag: Option<usize>, default: usize) -> Result<usize> {
        Ok(flag.or(self.cfg.get_usize(key)?).unwrap_or(default))
    }

    pub fn f64(&self, key: &str, flag: Option<f64>, default: f64) -> Result<f64> {
        Ok(flag.or(self.cfg.get_f64(key)?).unwrap_or(default))
    }

    pub fn bool(&self, key: &str, flag: bool, default: bool) -> Result<bool> {
        Ok(if flag {
            true
        } else {
            self.cfg.get_bool(key)?.unwrap_or(default)
        })
    }

    pub fn string(&self, key: &str, flag: Option<&str>, default: &str) -> String {
        flag.map(str::to_string)
            .or_else(|| self.cfg.get(key).map(str::to_string))
            .unwrap_or_else(|| default.to_string())
    }

    /// Comma-separated channel list, e.g. `32,64,128`.
    pub fn channels(&self, key: &str, flag: Option<&str>, default: &[usize]) -> Result<Vec<usize>> {
        let text = match flag.map(str::to_string).or_else(|| self.cfg.get(key).map(str::to_string)) {
            Some(t) => t,
            None => return Ok(default.to_vec()),
        };
        text.split(',')
            .map(|part| {
                part.trim()
                    .parse::<usize>()
                    .with_context(|| format!("invalid channel list entry '{part}' for {key}"))
            })
            .collect()
    }
}

/// Shared inference knobs of `bsa`, `locate`, `eval`, and `ablation`. The
/// candidate stage of all of them resolves from the same keys and the same
/// sub-seeds, so composing subcommands reproduces the pipeline byte for
/// byte.
#[derive(clap::Args, Debug)]
pub struct PipelineOpts {
    /// Dataset directory (manifest.csv, images/, masks/).
    #[arg(long)]
    pub dataset_dir: PathBuf,
    /// Atlas entries that vote on the candidate (config: bsa.k).
    #[arg(long)]
    pub k: Option<usize>,
    /// Oracle segmentation perturbation magnitude, px (config: provider.magnitude).
    #[arg(long)]
    pub magnitude: Option<f64>,
    /// Oracle boundary dropout rate in [0,1) (config: provider.dropout).
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Segmentation source: oracle_perturb or toy_unet (config: provider.mode).
    #[arg(long)]
    pub provider: Option<String>,
    /// Trained segmenter checkpoint, required with --provider toy_unet.
    #[arg(long)]
    pub seg_checkpoint: Option<PathBuf>,
    /// Hit-neighborhood radius, px (config: eval.hit_radius).
    #[arg(long)]
    pub hit_radius: Option<f64>,
    /// Hit-neighborhood shape: euclidean or l1 (config: eval.norm).
    #[arg(long)]
    pub norm: Option<String>,
}

impl PipelineOpts {
    pub fn resolve(&self, ctx: &Ctx) -> Result<PipelineConfig> {
        let mut bsa = BsaConfig {
            k: ctx.usize("bsa.k", self.k, BsaConfig::default().k)?,
            dice_weighted: ctx.bool("bsa.dice_weighted", false, false)?,
            ..BsaConfig::default()
        };
        bsa.registration.seed = ctx.sub_seed(SEED_REG);
        if let Some(v) = ctx.cfg.get_usize("reg.max_evaluations")? {
            bsa.registration.max_evaluations = v;
        }
        if let Some(v) = ctx.cfg.get_usize("reg.restarts")? {
            bsa.registration.restarts = v;
        }
        if let Some(v) = ctx.cfg.get_bool("reg.coarse_search")? {
            bsa.registration.coarse_search = v;
        }

        let defaults = ProviderConfig::default();
        let provider = ProviderConfig {
            mode: ProviderMode::parse(&ctx.string(
                "provider.mode",
                self.provider.as_deref(),
                defaults.mode.as_str(),
            ))?,
            perturb_magnitude: ctx.f64(
                "provider.magnitude",
                self.magnitude,
                defaults.perturb_magnitude,
            )?,
            dropout_rate: ctx.f64("provider.dropout", self.dropout, defaults.dropout_rate)?,
            seed: ctx.sub_seed(SEED_SEG),
        };

        let eval = EvalConfig {
            hit_radius: ctx.f64("eval.hit_radius", self.hit_radius, 15.0)?,
            neighborhood_norm: NeighborhoodNorm::parse(&ctx.string(
                "eval.norm",
                self.norm.as_deref(),
                "euclidean",
            ))?,
        };
        eval.validate()?;

        Ok(PipelineConfig {
            provider,
            seg_checkpoint: self.seg_checkpoint.clone(),
            bsa,
            eval,
            refine_checkpoint: None,
        })
    }
}
