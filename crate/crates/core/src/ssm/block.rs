use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::selective::selective_scan;
use super::sequence::{ScanDir, SeqOrder};
use crate::autodiff::{ParamId, ParamStore, Var};
use crate::error::Result;
use crate::nn::{Conv1d, Ctx, LayerNorm, Linear};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SsmConfig {
    /// Channels the scan runs over.
    pub inner: usize,
    /// State size `N`.
    pub states: usize,
    pub conv_width: usize,
    pub dirs: Vec<ScanDir>,
}

impl SsmConfig {
    /// Rank of the low-rank step-size projection.
    pub fn dt_rank(&self) -> usize {
        self.inner.div_ceil(16)
    }
}

/// Causal conv, SiLU, then an input-dependent scan over one sequence order.
#[derive(Clone, Debug)]
pub struct SsmBranch {
    pub conv: Conv1d,
    pub dt_down: Linear,
    pub dt_up: Linear,
    pub x_b: Linear,
    pub x_c: Linear,
    /// `A = -exp(a_log)`, `[inner, N]`.
    pub a_log: ParamId,
    pub skip: ParamId,
}

impl SsmBranch {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &SsmConfig) -> Self {
        let (di, n, r) = (cfg.inner, cfg.states, cfg.dt_rank());
        let conv = Conv1d::new(store, rng, &format!("{name}.conv"), di, cfg.conv_width);
        let dt_down = Linear::new(store, rng, &format!("{name}.dt_down"), di, r, false);
        let dt_up = Linear::new(store, rng, &format!("{name}.dt_up"), r, di, true);
        // bias so that softplus(bias) is log-uniform in [1e-3, 1e-1]
        let bias = Tensor::from_fn(&[di], |_| {
            let dt = (rng.random_range(0.001f64.ln()..0.1f64.ln())).exp();
            dt + (-(-dt).exp_m1()).ln()
        });
        store.set_value(dt_up.bias.expect("dt_up has a bias"), bias).expect("bias shape");
        let x_b = Linear::new(store, rng, &format!("{name}.x_b"), di, n, false);
        let x_c = Linear::new(store, rng, &format!("{name}.x_c"), di, n, false);
        let a_log = store.add(
            format!("{name}.a_log"),
            Tensor::from_fn(&[di, n], |i| ((i % n) as f64 + 1.0).ln()),
        );
        let skip = store.add(format!("{name}.skip"), Tensor::ones(&[di]));
        Self { conv, dt_down, dt_up, x_b, x_c, a_log, skip }
    }

    /// Per-step `(delta, B, C)` from the scan input `x[B, L, inner]`.
    pub fn selective_params<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        x: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        let low = self.dt_down.forward(ctx, x)?;
        let delta = ops::softplus(self.dt_up.forward(ctx, low)?);
        Ok((delta, self.x_b.forward(ctx, x)?, self.x_c.forward(ctx, x)?))
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let u = ops::silu(self.conv.forward(ctx, x)?);
        let (delta, b, c) = self.selective_params(ctx, u)?;
        let a = ops::neg(ops::exp(ctx.param(self.a_log)));
        selective_scan(u, delta, a, b, c, ctx.param(self.skip))
    }
}

/// One [`SsmBranch`] per scan direction, outputs averaged in row-major order.
#[derive(Clone, Debug)]
pub struct DirectionalSsm {
    pub dirs: Vec<ScanDir>,
    pub branches: Vec<SsmBranch>,
}

impl DirectionalSsm {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &SsmConfig) -> Self {
        let branches = cfg
            .dirs
            .iter()
            .map(|d| SsmBranch::new(store, rng, &format!("{name}.{}", d.name()), cfg))
            .collect();
        Self {
            dirs: cfg.dirs.clone(),
            branches,
        }
    }

    /// `x[B, H*W, inner]` in row-major pixel order.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>, h: usize, w: usize) -> Result<Var<'t>> {
        let mut acc: Option<Var<'t>> = None;
        for (dir, branch) in self.dirs.iter().zip(&self.branches) {
            let order = SeqOrder::new(*dir, h, w);
            let y = order.undo(branch.forward(ctx, order.apply(x)?)?)?;
            acc = Some(match acc {
                Some(a) => ops::add(a, y)?,
                None => y,
            });
        }
        let acc = acc.expect("at least one scan direction");
        Ok(if self.dirs.len() > 1 {
            ops::scale(acc, 1.0 / self.dirs.len() as f64)
        } else {
            acc
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MambaConfig {
    pub dim: usize,
    pub expansion: usize,
    pub states: usize,
    pub conv_width: usize,
    pub dirs: Vec<ScanDir>,
}

impl MambaConfig {
    fn ssm(&self) -> SsmConfig {
        SsmConfig {
            inner: self.dim * self.expansion,
            states: self.states,
            conv_width: self.conv_width,
            dirs: self.dirs.clone(),
        }
    }
}

/// Pre-norm residual Mamba block on row-major sequences `[B, H*W, C]`:
/// `x + res_scale * out(ssm(in(LN x)) * silu(gate(LN x)))`.
#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub norm: LayerNorm,
    pub in_proj: Linear,
    pub gate_proj: Linear,
    pub ssm: DirectionalSsm,
    pub out_proj: Linear,
    pub res_scale: ParamId,
}

impl MambaBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &MambaConfig) -> Self {
        let inner = cfg.dim * cfg.expansion;
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), cfg.dim),
            in_proj: Linear::new(store, rng, &format!("{name}.in_proj"), cfg.dim, inner, true),
            gate_proj: Linear::new(store, rng, &format!("{name}.gate_proj"), cfg.dim, inner, true),
            ssm: DirectionalSsm::new(store, rng, &format!("{name}.ssm"), &cfg.ssm()),
            out_proj: Linear::new(store, rng, &format!("{name}.out_proj"), inner, cfg.dim, true),
            res_scale: store.add(format!("{name}.res_scale"), Tensor::ones(&[cfg.dim])),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>, h: usize, w: usize) -> Result<Var<'t>> {
        let xn = self.norm.forward(ctx, x)?;
        let inner = self.in_proj.forward(ctx, xn)?;
        let gate = ops::silu(self.gate_proj.forward(ctx, xn)?);
        let y = ops::mul(self.ssm.forward(ctx, inner, h, w)?, gate)?;
        let out = self.out_proj.forward(ctx, y)?;
        ops::add(x, ops::mul_last(out, ctx.param(self.res_scale))?)
    }

    /// Same block applied to an image `[B, C, H, W]`.
    pub fn forward_image<'t>(&self, ctx: &Ctx<'t, '_>, f: Var<'t>) -> Result<Var<'t>> {
        let s = f.shape();
        let (h, w) = (s[2], s[3]);
        let y = self.forward(ctx, ops::nchw_to_seq(f)?, h, w)?;
        ops::seq_to_nchw(y, h, w)
    }
}
