//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment. Every key must be present
//! exactly once and unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::PhantomSpec;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::mri::CartesianMask;
use crate::optim::AdamConfig;

/// Where training pairs come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Phantoms generated in memory from `data_seed`.
    Synthetic,
    /// A directory with `train/` and `val/` splits as written by `gen-data`.
    Dir(PathBuf),
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synthetic => f.write_str("synthetic"),
            DataSource::Dir(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" => Err(Error::Config("data_dir is empty".into())),
            "synthetic" => Ok(DataSource::Synthetic),
            p => Ok(DataSource::Dir(PathBuf::from(p))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub steps: u64,
    pub batch_size: usize,
    /// Synthetic data only.
    pub image_size: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub data_seed: u64,
    pub data: DataSource,
    pub phantom_shapes: usize,
    pub noise_sigma: f64,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub mask_seed: u64,
    pub log_every: u64,
    /// Zero evaluates only before the first and after the last step.
    pub eval_every: u64,
    /// Zero writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Training batches used to re-estimate batch-norm statistics before
    /// each evaluation.
    pub calibration_batches: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            steps: 1000,
            batch_size: 2,
            image_size: 64,
            train_count: 180,
            val_count: 20,
            data_seed: 1,
            data: DataSource::Synthetic,
            phantom_shapes: 6,
            noise_sigma: 0.01,
            acceleration: 4.0,
            center_fraction: 0.08,
            mask_seed: 0,
            log_every: 50,
            eval_every: 250,
            checkpoint_every: 250,
            calibration_batches: 16,
        }
    }
}

pub const KEYS: [&str; 31] = [
    "seed",
    "channels",
    "mamba_depth",
    "tcm_depth",
    "scan_dirs",
    "state_size",
    "expansion",
    "conv_width",
    "asff_alpha",
    "variant",
    "lr",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "steps",
    "batch_size",
    "image_size",
    "train_count",
    "val_count",
    "data_seed",
    "data_dir",
    "phantom_shapes",
    "noise_sigma",
    "acceleration",
    "center_fraction",
    "mask_seed",
    "log_every",
    "eval_every",
    "checkpoint_every",
    "calibration_batches",
];

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self
            .0
            .remove(key)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("bad value for `{key}`: `{raw}`")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("unknown key `{k}` on line {}", n + 1)));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{k}` on line {}", n + 1)));
            }
        }
        let mut f = Fields(map);
        let seed = f.take("seed")?;
        let model = ModelConfig {
            channels: f.take("channels")?,
            mamba_depth: f.take("mamba_depth")?,
            tcm_depth: f.take("tcm_depth")?,
            scan_dirs: f.take("scan_dirs")?,
            state_size: f.take("state_size")?,
            expansion: f.take("expansion")?,
            conv_width: f.take("conv_width")?,
            asff_alpha: f.take("asff_alpha")?,
            variant: {
                let raw: String = f.take("variant")?;
                raw.parse::<Variant>()?
            },
        };
        let adam = AdamConfig {
            lr: f.take("lr")?,
            weight_decay: f.take("weight_decay")?,
            beta1: f.take("beta1")?,
            beta2: f.take("beta2")?,
            eps: f.take("adam_eps")?,
        };
        let cfg = Self {
            seed,
            model,
            adam,
            steps: f.take("steps")?,
            batch_size: f.take("batch_size")?,
            image_size: f.take("image_size")?,
            train_count: f.take("train_count")?,
            val_count: f.take("val_count")?,
            data_seed: f.take("data_seed")?,
            data: {
                let raw: String = f.take("data_dir")?;
                raw.parse()?
            },
            phantom_shapes: f.take("phantom_shapes")?,
            noise_sigma: f.take("noise_sigma")?,
            acceleration: f.take("acceleration")?,
            center_fraction: f.take("center_fraction")?,
            mask_seed: f.take("mask_seed")?,
            log_every: f.take("log_every")?,
            eval_every: f.take("eval_every")?,
            checkpoint_every: f.take("checkpoint_every")?,
            calibration_batches: f.take("calibration_batches")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        if self.data == DataSource::Synthetic {
            if self.train_count == 0 || self.val_count == 0 {
                return Err(Error::Config("train_count and val_count must be positive".into()));
            }
            if self.image_size < crate::data::phantom::MIN_SIZE {
                return Err(Error::Config(format!(
                    "image_size must be at least {}, got {}",
                    crate::data::phantom::MIN_SIZE,
                    self.image_size
                )));
            }
            if self.phantom_shapes == 0 {
                return Err(Error::Config("phantom_shapes must be positive".into()));
            }
        }
        self.mask(self.image_size.max(1))?;
        Ok(())
    }

    /// Template for synthetic pairs; the seed is filled in per pair.
    pub fn phantom(&self) -> PhantomSpec {
        PhantomSpec {
            num_shapes: self.phantom_shapes,
            noise_sigma: self.noise_sigma,
            ..PhantomSpec::new(self.data_seed, self.image_size)
        }
    }

    pub fn mask(&self, width: usize) -> Result<CartesianMask> {
        CartesianMask::generate(width, self.acceleration, self.center_fraction, self.mask_seed)
    }

    /// Fully resolved text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let a = &self.adam;
        let values: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("channels", m.channels.to_string()),
            ("mamba_depth", m.mamba_depth.to_string()),
            ("tcm_depth", m.tcm_depth.to_string()),
            ("scan_dirs", m.scan_dirs.to_string()),
            ("state_size", m.state_size.to_string()),
            ("expansion", m.expansion.to_string()),
            ("conv_width", m.conv_width.to_string()),
            ("asff_alpha", m.asff_alpha.to_string()),
            ("variant", m.variant.to_string()),
            ("lr", a.lr.to_string()),
            ("weight_decay", a.weight_decay.to_string()),
            ("beta1", a.beta1.to_string()),
            ("beta2", a.beta2.to_string()),
            ("adam_eps", a.eps.to_string()),
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("image_size", self.image_size.to_string()),
            ("train_count", self.train_count.to_string()),
            ("val_count", self.val_count.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("data_dir", self.data.to_string()),
            ("phantom_shapes", self.phantom_shapes.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("acceleration", self.acceleration.to_string()),
            ("center_fraction", self.center_fraction.to_string()),
            ("mask_seed", self.mask_seed.to_string()),
            ("log_every", self.log_every.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("calibration_batches", self.calibration_batches.to_string()),
        ];
        values.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
