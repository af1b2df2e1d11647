//! Parameterized layers: each holds [`ParamId`]s into a [`ParamStore`] and
//! binds them onto a tape when applied.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, StatsId, Tape, Var};
use crate::error::Result;
use crate::ops::{self, BnMode};
use crate::tensor::Tensor;

/// Everything a forward pass needs besides its inputs.
pub struct Ctx<'t, 's> {
    pub tape: &'t Tape,
    pub store: &'s mut ParamStore,
    pub mode: BnMode,
}

impl<'t, 's> Ctx<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s mut ParamStore, mode: BnMode) -> Self {
        Self { tape, store, mode }
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        self.tape.param(&*self.store, id)
    }
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform_fan_in(rng, &[din, dout], din));
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform_fan_in(rng, &[dout], din)));
        Self { weight, bias }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        ops::linear(x, ctx.param(self.weight), self.bias.map(|b| ctx.param(b)))
    }

    /// Zero weight and bias, so the layer outputs zeros.
    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.weight).fill(0.0);
        if let Some(b) = self.bias {
            store.value_mut(b).fill(0.0);
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Self {
        let fan_in = cin * k * k;
        let kernel = store.add(
            format!("{name}.kernel"),
            uniform_fan_in(rng, &[cout, cin, k, k], fan_in),
        );
        let bias = store.add(format!("{name}.bias"), uniform_fan_in(rng, &[cout], fan_in));
        Self { kernel, bias }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        ops::conv2d(x, ctx.param(self.kernel), Some(ctx.param(self.bias)))
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.kernel).fill(0.0);
        store.value_mut(self.bias).fill(0.0);
    }

    /// Channel-identity 1x1 kernel with zero bias (square layers only).
    pub fn set_identity(&self, store: &mut ParamStore) {
        let k = store.value_mut(self.kernel);
        let (cout, cin) = (k.dim(0), k.dim(1));
        assert_eq!((cout, k.dim(2), k.dim(3)), (cin, 1, 1));
        k.fill(0.0);
        for c in 0..cout {
            k.set(&[c, c, 0, 0], 1.0);
        }
        store.value_mut(self.bias).fill(0.0);
    }
}

/// Depthwise causal convolution over `[B, L, C]` sequences.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        width: usize,
    ) -> Self {
        let kernel = store.add(
            format!("{name}.kernel"),
            uniform_fan_in(rng, &[channels, width], width),
        );
        let bias = store.add(format!("{name}.bias"), uniform_fan_in(rng, &[channels], width));
        Self { kernel, bias }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        ops::conv1d_depthwise(x, ctx.param(self.kernel), Some(ctx.param(self.bias)))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        ops::layer_norm(x, ctx.param(self.gamma), ctx.param(self.beta), Self::EPS)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub omega: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            omega: store.add(format!("{name}.omega"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            stats: store.add_stats(name, channels),
        }
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let (omega, beta) = (ctx.param(self.omega), ctx.param(self.beta));
        let mode = ctx.mode;
        ops::batch_norm(x, omega, beta, ctx.store.stats_mut(self.stats), mode, Self::EPS)
            .map_err(|e| match e {
                crate::error::Error::Uninitialized(_) => crate::error::Error::Uninitialized(
                    ctx.store.stats_name(self.stats).to_string(),
                ),
                other => other,
            })
    }
}
