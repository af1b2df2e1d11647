//! The full reconstruction network and its ablation variants.
//!
//! ```text
//! F_tar = phi_tar(psi_tar(zero_filled))    F_ref = phi_ref(psi_ref(reference))
//! F_spa = TCM(F_tar, F_ref)                F_fre = SFF(F_tar, F_ref)
//! output = Decoder(ASFF(F_spa, F_fre)) + zero_filled
//! ```

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Var};
use crate::error::{Error, Result};
use crate::fusion::{Asff, Decoder, Sff, TcmConfig, TcmStack};
use crate::nn::{Conv2d, Ctx};
use crate::ops;
use crate::ssm::{MambaBlock, MambaConfig, ScanDir};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Spatial fusion replaced by `F_tar + F_ref`.
    SumSpatial,
    /// Frequency fusion replaced by `F_tar + F_ref`.
    SumFrequency,
    /// Domains concatenated without channel gating.
    NoAsff,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::SumSpatial,
        Variant::SumFrequency,
        Variant::NoAsff,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SumSpatial => "sum_spatial",
            Variant::SumFrequency => "sum_frequency",
            Variant::NoAsff => "no_asff",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of full, sum_spatial, sum_frequency, no_asff)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub mamba_depth: usize,
    pub tcm_depth: usize,
    pub scan_dirs: usize,
    pub state_size: usize,
    pub expansion: usize,
    pub conv_width: usize,
    pub asff_alpha: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            mamba_depth: 2,
            tcm_depth: 4,
            scan_dirs: 2,
            state_size: 8,
            expansion: 2,
            conv_width: 4,
            asff_alpha: crate::fusion::DEFAULT_ALPHA,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("state_size", self.state_size),
            ("expansion", self.expansion),
            ("conv_width", self.conv_width),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        ScanDir::set(self.scan_dirs)?;
        if !(0.0..=1.0).contains(&self.asff_alpha) {
            return Err(Error::Config(format!(
                "asff_alpha must lie in [0, 1], got {}",
                self.asff_alpha
            )));
        }
        Ok(())
    }

    fn dirs(&self) -> Vec<ScanDir> {
        ScanDir::set(self.scan_dirs).expect("validated scan_dirs")
    }
}

/// `conv3x3(1 -> C) -> ReLU -> conv3x3(C -> C)`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Self {
        Self {
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), 1, channels, 3),
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), channels, channels, 3),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        self.conv2.forward(ctx, ops::relu(self.conv1.forward(ctx, x)?))
    }
}

/// Shallow encoder followed by a stack of Mamba blocks.
#[derive(Clone, Debug)]
pub struct Extractor {
    pub encoder: Encoder,
    pub blocks: Vec<MambaBlock>,
}

impl Extractor {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &ModelConfig) -> Self {
        let mc = MambaConfig {
            dim: cfg.channels,
            expansion: cfg.expansion,
            states: cfg.state_size,
            conv_width: cfg.conv_width,
            dirs: cfg.dirs(),
        };
        Self {
            encoder: Encoder::new(store, rng, &format!("{name}.psi"), cfg.channels),
            blocks: (0..cfg.mamba_depth)
                .map(|i| MambaBlock::new(store, rng, &format!("{name}.phi.{i}"), &mc))
                .collect(),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let f = self.encoder.forward(ctx, x)?;
        if self.blocks.is_empty() {
            return Ok(f);
        }
        let s = f.shape();
        let (h, w) = (s[2], s[3]);
        let mut seq = ops::nchw_to_seq(f)?;
        for b in &self.blocks {
            seq = b.forward(ctx, seq, h, w)?;
        }
        ops::seq_to_nchw(seq, h, w)
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub tar: Extractor,
    pub reference: Extractor,
    pub tcm: Option<TcmStack>,
    pub sff: Option<Sff>,
    pub asff: Option<Asff>,
    pub decoder: Decoder,
}

impl Model {
    /// Build the network and its freshly initialized parameters.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let tar = Extractor::new(&mut store, &mut rng, "tar", config);
        let reference = Extractor::new(&mut store, &mut rng, "ref", config);
        let tcm = (config.variant != Variant::SumSpatial).then(|| {
            let tc = TcmConfig {
                dim: c,
                states: config.state_size,
                conv_width: config.conv_width,
                dirs: config.dirs(),
                depth: config.tcm_depth,
            };
            TcmStack::new(&mut store, &mut rng, "tcm", &tc)
        });
        let sff = (config.variant != Variant::SumFrequency)
            .then(|| Sff::new(&mut store, &mut rng, "sff", c));
        let asff = if config.variant == Variant::NoAsff {
            None
        } else {
            Some(Asff::new(&mut store, "asff", c, config.asff_alpha)?)
        };
        let decoder = Decoder::new(&mut store, &mut rng, "decoder", c);
        let model = Self {
            config: config.clone(),
            tar,
            reference,
            tcm,
            sff,
            asff,
            decoder,
        };
        Ok((model, store))
    }

    /// `zero_filled, reference [B, 1, H, W]` to a reconstruction of the same shape.
    pub fn forward<'t>(
        &self,
        ctx: &mut Ctx<'t, '_>,
        zero_filled: Var<'t>,
        reference: Var<'t>,
    ) -> Result<Var<'t>> {
        let (st, sr) = (zero_filled.shape(), reference.shape());
        if st.len() != 4 || st[1] != 1 || st != sr {
            return Err(Error::shape("model inputs", &st, &sr));
        }
        let f_tar = self.tar.forward(ctx, zero_filled)?;
        let f_ref = self.reference.forward(ctx, reference)?;
        let f_spa = match &self.tcm {
            Some(t) => t.forward(ctx, f_tar, f_ref)?,
            None => ops::add(f_tar, f_ref)?,
        };
        let f_fre = match &self.sff {
            Some(s) => s.forward(ctx, f_tar, f_ref)?,
            None => ops::add(f_tar, f_ref)?,
        };
        let (f_spa, f_fre) = match &self.asff {
            Some(a) => a.forward(ctx, f_spa, f_fre)?,
            None => (f_spa, f_fre),
        };
        self.decoder.forward(ctx, f_spa, f_fre, zero_filled)
    }
}
