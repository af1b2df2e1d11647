//! Amplitude harmonization: a squeeze-and-select blend of two amplitude
//! spectra with per-channel convex weights.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Var};
use crate::error::Result;
use crate::nn::{BatchNorm, Ctx, Linear};
use crate::ops;

/// Width of the compact descriptor for `channels` input channels.
pub fn reduced_dim(channels: usize) -> usize {
    (channels / 4).max(4)
}

#[derive(Clone, Debug)]
pub struct Sahm {
    /// `W`, `[C] -> [L_red]`.
    pub fc: Linear,
    pub bn: BatchNorm,
    /// Logits for the reference branch.
    pub proj_a: Linear,
    /// Logits for the target branch.
    pub proj_b: Linear,
}

impl Sahm {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Self {
        let l = reduced_dim(channels);
        Self {
            fc: Linear::new(store, rng, &format!("{name}.fc"), channels, l, false),
            bn: BatchNorm::new(store, &format!("{name}.bn"), l),
            proj_a: Linear::new(store, rng, &format!("{name}.proj_a"), l, channels, false),
            proj_b: Linear::new(store, rng, &format!("{name}.proj_b"), l, channels, false),
        }
    }

    /// Per-channel weights `(a, b)`, each `[B, C]`, with `a + b = 1`.
    pub fn weights<'t>(
        &self,
        ctx: &mut Ctx<'t, '_>,
        a_tar: Var<'t>,
        a_ref: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        ops::same_shape("sahm", a_tar, a_ref)?;
        let s = ops::global_avg_pool(ops::add(a_tar, a_ref)?)?;
        let z = ops::relu(self.bn.forward(ctx, self.fc.forward(ctx, s)?)?);
        let logits = ops::stack_last(&[self.proj_a.forward(ctx, z)?, self.proj_b.forward(ctx, z)?])?;
        let w = ops::softmax(logits, 2)?;
        Ok((ops::select_last(w, 0)?, ops::select_last(w, 1)?))
    }

    /// `a_c * A_ref,c + b_c * A_tar,c` for `[B, C, H, W]` amplitudes.
    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, a_tar: Var<'t>, a_ref: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.weights(ctx, a_tar, a_ref)?;
        ops::add(ops::mul_channel(a_ref, a)?, ops::mul_channel(a_tar, b)?)
    }
}
