//! Fusion in the Fourier domain: amplitudes are harmonized, phases are
//! added, and each passes through its own pointwise conv stack before the
//! spectrum is recomposed and inverted.

use rand_chacha::ChaCha8Rng;

use super::sahm::Sahm;
use crate::autodiff::{ParamStore, Var};
use crate::error::Result;
use crate::nn::{Conv2d, Ctx};
use crate::ops;

/// `1x1 conv -> ReLU -> 1x1 conv`, second layer starting at the identity.
#[derive(Clone, Debug)]
pub struct PointwiseStack {
    pub first: Conv2d,
    pub second: Conv2d,
}

impl PointwiseStack {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Self {
        let first = Conv2d::new(store, rng, &format!("{name}.0"), channels, channels, 1);
        let second = Conv2d::new(store, rng, &format!("{name}.1"), channels, channels, 1);
        second.set_identity(store);
        Self { first, second }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        self.second.forward(ctx, ops::relu(self.first.forward(ctx, x)?))
    }

    pub fn set_identity(&self, store: &mut ParamStore) {
        self.first.set_identity(store);
        self.second.set_identity(store);
    }
}

#[derive(Clone, Debug)]
pub struct Sff {
    pub sahm: Sahm,
    pub conv_amp: PointwiseStack,
    pub conv_phase: PointwiseStack,
}

impl Sff {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Self {
        Self {
            sahm: Sahm::new(store, rng, &format!("{name}.sahm"), channels),
            conv_amp: PointwiseStack::new(store, rng, &format!("{name}.conv_amp"), channels),
            conv_phase: PointwiseStack::new(store, rng, &format!("{name}.conv_phase"), channels),
        }
    }

    /// `F_fre` for `[B, C, H, W]` features.
    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, f_tar: Var<'t>, f_ref: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward_with_residue(ctx, f_tar, f_ref)?.0)
    }

    /// Also returns `||Im||^2 / ||Re||^2` of the inverse transform, the
    /// part discarded when taking the real output.
    pub fn forward_with_residue<'t>(
        &self,
        ctx: &mut Ctx<'t, '_>,
        f_tar: Var<'t>,
        f_ref: Var<'t>,
    ) -> Result<(Var<'t>, f64)> {
        ops::same_shape("sff", f_tar, f_ref)?;
        let (st, sr) = (ops::fft2(f_tar)?, ops::fft2(f_ref)?);
        let amp = self.sahm.forward(ctx, ops::amplitude(st)?, ops::amplitude(sr)?)?;
        let phase = ops::add(ops::phase(st)?, ops::phase(sr)?)?;
        let amp = self.conv_amp.forward(ctx, amp)?;
        let phase = self.conv_phase.forward(ctx, phase)?;
        let spatial = ops::ifft2(ops::recompose(amp, phase)?)?;
        let re = ops::real(spatial)?;
        let im = ops::imag(spatial)?;
        let residue = im.value().norm_sq() / re.value().norm_sq().max(f64::MIN_POSITIVE);
        log::debug!("sff: discarded imaginary energy ratio {residue:.3e}");
        Ok((re, residue))
    }
}
