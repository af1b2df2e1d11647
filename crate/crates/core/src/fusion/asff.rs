//! Cross-domain channel gating driven by batch-norm scale factors.
//!
//! A channel whose scale `omega_c` falls below
//! `tau = omega_min + alpha (omega_max - omega_min)` is considered weak in
//! its own domain and is multiplied by the matching channel of the other
//! domain. Gating acts on the normalized features.

use crate::autodiff::{ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Ctx};
use crate::ops;

pub const DEFAULT_ALPHA: f64 = 0.1;

/// `omega_min + alpha (omega_max - omega_min)`.
pub fn threshold(omega: &[f64], alpha: f64) -> f64 {
    let lo = omega.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = omega.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    lo + alpha * (hi - lo)
}

/// Channels with `omega_c < tau`.
pub fn gated_channels(omega: &[f64], alpha: f64) -> Vec<bool> {
    let tau = threshold(omega, alpha);
    omega.iter().map(|&w| w < tau).collect()
}

#[derive(Clone, Debug)]
pub struct Asff {
    pub bn_spa: BatchNorm,
    pub bn_fre: BatchNorm,
    pub alpha: f64,
}

impl Asff {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("asff alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self {
            bn_spa: BatchNorm::new(store, &format!("{name}.bn_spa"), channels),
            bn_fre: BatchNorm::new(store, &format!("{name}.bn_fre"), channels),
            alpha,
        })
    }

    /// Gate flags `(spatial, frequency)` from the current scale factors.
    pub fn gates(&self, store: &ParamStore) -> (Vec<bool>, Vec<bool>) {
        (
            gated_channels(store.value(self.bn_spa.omega).data(), self.alpha),
            gated_channels(store.value(self.bn_fre.omega).data(), self.alpha),
        )
    }

    /// Enhanced `(F_spa', F_fre')` for `[B, C, H, W]` features.
    pub fn forward<'t>(
        &self,
        ctx: &mut Ctx<'t, '_>,
        f_spa: Var<'t>,
        f_fre: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        ops::same_shape("asff", f_spa, f_fre)?;
        let (g_spa, g_fre) = self.gates(ctx.store);
        let spa = self.bn_spa.forward(ctx, f_spa)?;
        let fre = self.bn_fre.forward(ctx, f_fre)?;
        Ok((
            ops::gate_channels(spa, fre, &g_spa)?,
            ops::gate_channels(fre, spa, &g_fre)?,
        ))
    }
}
