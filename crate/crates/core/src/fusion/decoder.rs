use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Var};
use crate::error::Result;
use crate::nn::{Conv2d, Ctx};
use crate::ops;

/// `conv3x3(2C -> C) -> ReLU -> conv3x3(C -> 1)` on the concatenated
/// domains, plus the zero-filled input as a global residual.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Self {
        Self {
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), 2 * channels, channels, 3),
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), channels, 1, 3),
        }
    }

    /// `f_spa, f_fre [B, C, H, W]`, `zero_filled [B, 1, H, W]`.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        f_spa: Var<'t>,
        f_fre: Var<'t>,
        zero_filled: Var<'t>,
    ) -> Result<Var<'t>> {
        let x = ops::concat_channels(f_spa, f_fre)?;
        let x = ops::relu(self.conv1.forward(ctx, x)?);
        ops::add(self.conv2.forward(ctx, x)?, zero_filled)
    }
}
