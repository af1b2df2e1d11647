//! Target-guided cross fusion in state space.
//!
//! Both streams are projected (`z = Linear(LN(F))`) and pushed through an
//! ungated SSM; the target projection then gates the sum of the two hidden
//! sequences. Features travel as `[B, L, D]` sequences inside the stack.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Var};
use crate::error::Result;
use crate::nn::{Ctx, LayerNorm, Linear};
use crate::ops;
use crate::ssm::{DirectionalSsm, ScanDir, SsmConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TcmConfig {
    pub dim: usize,
    pub states: usize,
    pub conv_width: usize,
    pub dirs: Vec<ScanDir>,
    pub depth: usize,
}

impl TcmConfig {
    fn ssm(&self) -> SsmConfig {
        SsmConfig {
            inner: self.dim,
            states: self.states,
            conv_width: self.conv_width,
            dirs: self.dirs.clone(),
        }
    }
}

/// `Linear(LN(F))` for one stream.
#[derive(Clone, Debug)]
pub struct TcmProjection {
    pub norm: LayerNorm,
    pub linear: Linear,
}

impl TcmProjection {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize) -> Self {
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            linear: Linear::new(store, rng, &format!("{name}.linear"), dim, dim, true),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, f: Var<'t>) -> Result<Var<'t>> {
        self.linear.forward(ctx, self.norm.forward(ctx, f)?)
    }
}

/// `(H_tar + H_ref) * SiLU(z_tar)`, the factored form of
/// `H_tar * SiLU(z_tar) + H_ref * SiLU(z_tar)`.
pub fn tcm_fuse<'t>(h_tar: Var<'t>, h_ref: Var<'t>, z_tar: Var<'t>) -> Result<Var<'t>> {
    ops::same_shape("tcm_fuse", h_tar, z_tar)?;
    ops::mul(ops::add(h_tar, h_ref)?, ops::silu(z_tar))
}

/// One cross-fusion module. Each stream has its own projection and SSM.
#[derive(Clone, Debug)]
pub struct Tcm {
    pub proj_tar: TcmProjection,
    pub proj_ref: TcmProjection,
    pub ssm_tar: DirectionalSsm,
    pub ssm_ref: DirectionalSsm,
}

impl Tcm {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &TcmConfig) -> Self {
        let ssm = cfg.ssm();
        Self {
            proj_tar: TcmProjection::new(store, rng, &format!("{name}.proj_tar"), cfg.dim),
            proj_ref: TcmProjection::new(store, rng, &format!("{name}.proj_ref"), cfg.dim),
            ssm_tar: DirectionalSsm::new(store, rng, &format!("{name}.ssm_tar"), &ssm),
            ssm_ref: DirectionalSsm::new(store, rng, &format!("{name}.ssm_ref"), &ssm),
        }
    }

    /// Fused feature `F_spa` for sequences `[B, H*W, D]` (no residual).
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        f_tar: Var<'t>,
        f_ref: Var<'t>,
        h: usize,
        w: usize,
    ) -> Result<Var<'t>> {
        ops::same_shape("tcm", f_tar, f_ref)?;
        let z_tar = self.proj_tar.forward(ctx, f_tar)?;
        let z_ref = self.proj_ref.forward(ctx, f_ref)?;
        let h_tar = self.ssm_tar.forward(ctx, z_tar, h, w)?;
        let h_ref = self.ssm_ref.forward(ctx, z_ref, h, w)?;
        tcm_fuse(h_tar, h_ref, z_tar)
    }
}

/// Residual stack: `x_i = x_{i-1} + Tcm_i(x_{i-1}, F_ref)`, `x_0 = F_tar`.
#[derive(Clone, Debug)]
pub struct TcmStack {
    pub modules: Vec<Tcm>,
}

impl TcmStack {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &TcmConfig) -> Self {
        Self {
            modules: (0..cfg.depth)
                .map(|i| Tcm::new(store, rng, &format!("{name}.{i}"), cfg))
                .collect(),
        }
    }

    /// Images `[B, C, H, W]` in, fused image features out.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, f_tar: Var<'t>, f_ref: Var<'t>) -> Result<Var<'t>> {
        ops::same_shape("tcm_stack", f_tar, f_ref)?;
        let s = f_tar.shape();
        let (h, w) = (s[2], s[3]);
        let r = ops::nchw_to_seq(f_ref)?;
        let mut x = ops::nchw_to_seq(f_tar)?;
        for m in &self.modules {
            x = ops::add(x, m.forward(ctx, x, r, h, w)?)?;
        }
        ops::seq_to_nchw(x, h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::gradcheck::{grad_check, grad_check_params, project};
    use crate::ops::BnMode;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn config(dim: usize, depth: usize) -> TcmConfig {
        TcmConfig {
            dim,
            states: 3,
            conv_width: 4,
            dirs: ScanDir::set(2).unwrap(),
            depth,
        }
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn zero_all(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
    }

    #[test]
    fn identity_projection_of_standardized_rows() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = TcmProjection::new(&mut store, &mut rng, "p", 4);
        let w = store.value_mut(p.linear.weight);
        w.fill(0.0);
        for i in 0..4 {
            w.set(&[i, i], 1.0);
        }
        store.value_mut(p.linear.bias.unwrap()).fill(0.0);
        // rows with mean 0 and variance 1
        let f = Tensor::new(&[1, 2, 4], vec![1.0, -1.0, 1.0, -1.0, -1.0, -1.0, 1.0, 1.0]).unwrap();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &mut store, BnMode::Train);
        let z = p.forward(&ctx, tape.constant(f.clone())).unwrap().value();
        assert!(z.max_abs_diff(&f) < 1e-5);
    }

    #[test]
    fn zero_weight_projection_is_bias() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = TcmProjection::new(&mut store, &mut rng, "p", 3);
        store.value_mut(p.linear.weight).fill(0.0);
        let bias = store.value(p.linear.bias.unwrap()).clone();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &mut store, BnMode::Train);
        let z = p.forward(&ctx, tape.constant(rand_tensor(&[2, 5, 3], 1))).unwrap().value();
        for row in z.data().chunks_exact(3) {
            assert_eq!(row, bias.data());
        }
    }

    #[test]
    fn projection_gradient() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = TcmProjection::new(&mut store, &mut rng, "p", 4);
        let proj = rand_tensor(&[2, 3, 4], 3);
        let e = grad_check(
            |v| {
                let mut s = store.clone();
                let ctx = Ctx::new(v.tape(), &mut s, BnMode::Train);
                project(p.forward(&ctx, v).unwrap(), &proj)
            },
            &rand_tensor(&[2, 3, 4], 4),
            1e-6,
        );
        assert!(e < 1e-5, "{e}");
    }

    #[test]
    fn hidden_of_zero_input_with_zero_biases_is_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ssm = DirectionalSsm::new(&mut store, &mut rng, "s", &config(4, 1).ssm());
        for b in &ssm.branches {
            store.value_mut(b.conv.bias).fill(0.0);
        }
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &mut store, BnMode::Train);
        let h = ssm.forward(&ctx, tape.constant(Tensor::zeros(&[1, 6, 4])), 2, 3).unwrap();
        assert_eq!(h.shape(), vec![1, 6, 4]);
        assert!(h.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_matches_separately_called_primitives() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut cfg = config(3, 1);
        cfg.dirs = ScanDir::set(1).unwrap();
        let ssm = DirectionalSsm::new(&mut store, &mut rng, "s", &cfg.ssm());
        let z = rand_tensor(&[2, 8, 3], 7);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &mut store, BnMode::Train);
        let zv = tape.constant(z);
        let got = ssm.forward(&ctx, zv, 2, 4).unwrap().value();

        let br = &ssm.branches[0];
        let u = ops::silu(
            ops::conv1d_depthwise(zv, ctx.param(br.conv.kernel), Some(ctx.param(br.conv.bias)))
                .unwrap(),
        );
        let low = ops::linear(u, ctx.param(br.dt_down.weight), None).unwrap();
        let delta = ops::softplus(
            ops::linear(low, ctx.param(br.dt_up.weight), Some(ctx.param(br.dt_up.bias.unwrap())))
                .unwrap(),
        );
        let b = ops::linear(u, ctx.param(br.x_b.weight), None).unwrap();
        let c = ops::linear(u, ctx.param(br.x_c.weight), None).unwrap();
        let a = ops::neg(ops::exp(ctx.param(br.a_log)));
        let want = crate::ssm::selective_scan(u, delta, a, b, c, ctx.param(br.skip))
            .unwrap()
            .value();
        assert_eq!(*got, *want);
    }

    #[test]
    fn fuse_forms_and_special_cases() {
        let tape = Tape::new();
        let ht = tape.constant(rand_tensor(&[1, 5, 3], 1));
        let hr = tape.constant(rand_tensor(&[1, 5, 3], 2));
        let z = tape.constant(rand_tensor(&[1, 5, 3], 3));
        let factored = tcm_fuse(ht, hr, z).unwrap().value();
        let g = ops::silu(z);
        let two_term = ops::add(ops::mul(ht, g).unwrap(), ops::mul(hr, g).unwrap())
            .unwrap()
            .value();
        assert!(factored.max_abs_diff(&two_term) < 1e-15);

        let zero = tape.constant(Tensor::zeros(&[1, 5, 3]));
        let only_tar = tcm_fuse(ht, zero, z).unwrap().value();
        assert_eq!(*only_tar, *ops::mul(ht, g).unwrap().value());
        let closed = tcm_fuse(ht, hr, zero).unwrap().value();
        assert!(closed.data().iter().all(|&v| v == 0.0));

        let bad = tape.constant(Tensor::zeros(&[1, 4, 3]));
        assert!(tcm_fuse(ht, hr, bad).is_err());
    }

    #[test]
    fn zero_stack_is_a_pure_residual() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let stack = TcmStack::new(&mut store, &mut rng, "t", &config(4, 4));
        zero_all(&mut store);
        let f_tar = rand_tensor(&[2, 4, 3, 3], 9);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &mut store, BnMode::Train);
        let y = stack
            .forward(&ctx, tape.constant(f_tar.clone()), tape.constant(rand_tensor(&[2, 4, 3, 3], 10)))
            .unwrap();
        assert_eq!(*y.value(), f_tar);
    }

    #[test]
    fn depth_one_is_a_single_module_plus_residual_and_deterministic() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let stack = TcmStack::new(&mut store, &mut rng, "t", &config(4, 1));
        let (ft, fr) = (rand_tensor(&[1, 4, 2, 3], 12), rand_tensor(&[1, 4, 2, 3], 13));
        let run = |store: &mut ParamStore| {
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, store, BnMode::Train);
            let y = stack.forward(&ctx, tape.constant(ft.clone()), tape.constant(fr.clone()));
            (*y.unwrap().value()).clone()
        };
        let y = run(&mut store);
        assert_eq!(run(&mut store), y);

        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &mut store, BnMode::Train);
        let t = ops::nchw_to_seq(tape.constant(ft.clone())).unwrap();
        let r = ops::nchw_to_seq(tape.constant(fr.clone())).unwrap();
        let single = stack.modules[0].forward(&ctx, t, r, 2, 3).unwrap();
        let want = ops::seq_to_nchw(ops::add(t, single).unwrap(), 2, 3).unwrap().value();
        assert_eq!(y, *want);
    }

    #[test]
    fn stack_gradients() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let stack = TcmStack::new(&mut store, &mut rng, "t", &config(3, 2));
        for m in &stack.modules {
            for s in [&m.ssm_tar, &m.ssm_ref] {
                for b in &s.branches {
                    store.value_mut(b.dt_up.bias.unwrap()).fill(0.0);
                }
            }
        }
        let (ft, fr) = (rand_tensor(&[1, 3, 3, 3], 15), rand_tensor(&[1, 3, 3, 3], 16));
        let proj = rand_tensor(&[1, 3, 3, 3], 17);
        let coords: Vec<_> = store.ids().map(|id| (id, 0)).collect();
        let e = grad_check_params(&mut store, |s| s, &coords, 1e-5, |tape, store| {
            let ctx = Ctx::new(tape, store, BnMode::Train);
            let y = stack.forward(&ctx, tape.constant(ft.clone()), tape.constant(fr.clone()))?;
            Ok(project(y, &proj))
        })
        .unwrap();
        assert!(e < 1e-4, "params: {e}");

        for which in 0..2 {
            let e = grad_check(
                |v| {
                    let mut s = store.clone();
                    let ctx = Ctx::new(v.tape(), &mut s, BnMode::Train);
                    let other = v.tape().constant(if which == 0 { fr.clone() } else { ft.clone() });
                    let (t, r) = if which == 0 { (v, other) } else { (other, v) };
                    project(stack.forward(&ctx, t, r).unwrap(), &proj)
                },
                if which == 0 { &ft } else { &fr },
                1e-5,
            );
            assert!(e < 1e-4, "input {which}: {e}");
        }
    }
}
