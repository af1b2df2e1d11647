//! Fused selective scan on the tape.
//!
//! Discretization, recurrence and output contraction happen in one pass over
//! the sequence without materializing `[B, L, D, N]` tensors. The forward
//! pass keeps the state only at segment boundaries; the backward pass
//! recomputes one segment at a time and runs the adjoint recurrence through
//! it in reverse.

use std::rc::Rc;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::fastmath::{dphi, exp_phi, multiversion, Arith};
use crate::tensor::Tensor;

const SEGMENT: usize = 64;

struct Dims {
    batch: usize,
    len: usize,
    chans: usize,
    states: usize,
}

struct Inputs {
    u: Rc<Tensor>,
    delta: Rc<Tensor>,
    a: Rc<Tensor>,
    b: Rc<Tensor>,
    c: Rc<Tensor>,
    skip: Rc<Tensor>,
}

/// `y[b, l, d] = sum_n C[b, l, n] h[b, l, d, n] + skip[d] u[b, l, d]` with
///
/// ```text
/// z    = delta[b, l, d] * a[d, n]
/// h_l  = e^z h_{l-1} + phi(z) delta[b, l, d] B[b, l, n] u[b, l, d]
/// ```
///
/// and `h_{-1} = 0`. Shapes: `u, delta [B, L, D]`, `a [D, N]`,
/// `b, c [B, L, N]`, `skip [D]`.
pub fn selective_scan<'t>(
    u: Var<'t>,
    delta: Var<'t>,
    a: Var<'t>,
    b: Var<'t>,
    c: Var<'t>,
    skip: Var<'t>,
) -> Result<Var<'t>> {
    let us = u.shape();
    if us.len() != 3 {
        return Err(Error::invalid("selective_scan", format!("u must be [B, L, D], got {us:?}")));
    }
    let a_shape = a.shape();
    if a_shape.len() != 2 || a_shape[0] != us[2] {
        return Err(Error::shape("selective_scan A", &us, &a_shape));
    }
    let dims = Dims {
        batch: us[0],
        len: us[1],
        chans: us[2],
        states: a_shape[1],
    };
    if delta.shape() != us {
        return Err(Error::shape("selective_scan delta", &us, &delta.shape()));
    }
    let bc_shape = [dims.batch, dims.len, dims.states];
    for v in [b, c] {
        if v.shape() != bc_shape {
            return Err(Error::shape("selective_scan B/C", &bc_shape, &v.shape()));
        }
    }
    if skip.shape() != [dims.chans] {
        return Err(Error::shape("selective_scan D", &us, &skip.shape()));
    }
    let inputs = Inputs {
        u: u.value(),
        delta: delta.value(),
        a: a.value(),
        b: b.value(),
        c: c.value(),
        skip: skip.value(),
    };
    let (y, checkpoints) = forward(&dims, &inputs);
    let y = Tensor::from_parts(us.clone(), y);
    Ok(u.tape().push_op(y, &[u, delta, a, b, c, skip], move |g, _| {
        backward(&dims, &inputs, &checkpoints, g.data())
    }))
}

multiversion! { fn forward(dims: &Dims, x: &Inputs) -> (Vec<f64>, Vec<f64>) = forward_impl; }
multiversion! {
    fn backward(dims: &Dims, x: &Inputs, ckpt: &[f64], gy: &[f64]) -> Vec<Option<Tensor>> = backward_impl;
}

/// `[D, N]` to `[N, D]`.
fn transpose(a: &[f64], d: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for ch in 0..d {
        for s in 0..n {
            t[s * d + ch] = a[ch * n + s];
        }
    }
    t
}

/// `sum(x * y)` with independent lanes so the loop vectorizes.
#[inline(always)]
fn dot<M: Arith>(x: &[f64], y: &[f64]) -> f64 {
    let mut lanes = [0.0; 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (xs, ys) in xc.zip(yc) {
        for i in 0..8 {
            lanes[i] = M::mul_add(xs[i], ys[i], lanes[i]);
        }
    }
    let mut tail = 0.0;
    for (&p, &q) in xr.iter().zip(yr) {
        tail = M::mul_add(p, q, tail);
    }
    lanes.iter().sum::<f64>() + tail
}

#[inline(always)]
fn lane_sum(x: &[f64]) -> f64 {
    let mut lanes = [0.0; 8];
    let xc = x.chunks_exact(8);
    let tail: f64 = xc.remainder().iter().sum();
    for xs in xc {
        for i in 0..8 {
            lanes[i] += xs[i];
        }
    }
    lanes.iter().sum::<f64>() + tail
}

// States are kept as `[N, D]` so the inner loops run over channels.
#[inline(always)]
fn forward_impl<M: Arith>(dims: &Dims, x: &Inputs) -> (Vec<f64>, Vec<f64>) {
    let Dims { batch, len, chans: d, states: n } = *dims;
    let dn = d * n;
    let segments = len.div_ceil(SEGMENT);
    let mut ckpt = vec![0.0; batch * segments * dn];
    let mut y = vec![0.0; batch * len * d];
    let (u, dt, bm, cm, skip) = (x.u.data(), x.delta.data(), x.b.data(), x.c.data(), x.skip.data());
    let at = transpose(x.a.data(), d, n);
    let mut h = vec![0.0; dn];
    let mut w = vec![0.0; d];
    for bi in 0..batch {
        h.fill(0.0);
        for l in 0..len {
            if l % SEGMENT == 0 {
                let s = bi * segments + l / SEGMENT;
                ckpt[s * dn..(s + 1) * dn].copy_from_slice(&h);
            }
            let row = bi * len + l;
            let ur = &u[row * d..(row + 1) * d];
            let dr = &dt[row * d..(row + 1) * d];
            let yr = &mut y[row * d..(row + 1) * d];
            for ch in 0..d {
                w[ch] = dr[ch] * ur[ch];
                yr[ch] = skip[ch] * ur[ch];
            }
            for s in 0..n {
                let (bv, cv) = (bm[row * n + s], cm[row * n + s]);
                let hs = &mut h[s * d..(s + 1) * d];
                let ar = &at[s * d..(s + 1) * d];
                for ch in 0..d {
                    let (ez, ph) = exp_phi::<M>(dr[ch] * ar[ch]);
                    let hv = M::mul_add(ez, hs[ch], ph * bv * w[ch]);
                    hs[ch] = hv;
                    yr[ch] = M::mul_add(cv, hv, yr[ch]);
                }
            }
        }
    }
    (y, ckpt)
}

#[inline(always)]
fn backward_impl<M: Arith>(dims: &Dims, x: &Inputs, ckpt: &[f64], gy: &[f64]) -> Vec<Option<Tensor>> {
    let Dims { batch, len, chans: d, states: n } = *dims;
    let dn = d * n;
    let segments = len.div_ceil(SEGMENT);
    let (u, dt, bm, cm, skip) = (x.u.data(), x.delta.data(), x.b.data(), x.c.data(), x.skip.data());
    let at = transpose(x.a.data(), d, n);
    let mut du = vec![0.0; u.len()];
    let mut ddt = vec![0.0; u.len()];
    let mut dat = vec![0.0; dn];
    let mut db = vec![0.0; bm.len()];
    let mut dc = vec![0.0; cm.len()];
    let mut dskip = vec![0.0; d];

    // per-segment recomputed e^z, phi(z) and states
    let mut ez_buf = vec![0.0; SEGMENT * dn];
    let mut ph_buf = vec![0.0; SEGMENT * dn];
    let mut h_buf = vec![0.0; SEGMENT * dn];
    let mut g = vec![0.0; dn];
    let mut w = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for bi in 0..batch {
        g.fill(0.0);
        for seg in (0..segments).rev() {
            let l0 = seg * SEGMENT;
            let l1 = (l0 + SEGMENT).min(len);
            let start = &ckpt[(bi * segments + seg) * dn..(bi * segments + seg + 1) * dn];
            for l in l0..l1 {
                let row = bi * len + l;
                let k = (l - l0) * dn;
                let ur = &u[row * d..(row + 1) * d];
                let dr = &dt[row * d..(row + 1) * d];
                for ch in 0..d {
                    w[ch] = dr[ch] * ur[ch];
                }
                let (done, rest) = h_buf.split_at_mut(k);
                let prev_all = if l == l0 { start } else { &done[k - dn..] };
                for s in 0..n {
                    let bv = bm[row * n + s];
                    let r = s * d..(s + 1) * d;
                    let prev = &prev_all[r.clone()];
                    let hs = &mut rest[r.clone()];
                    let es = &mut ez_buf[k + r.start..k + r.end];
                    let ps = &mut ph_buf[k + r.start..k + r.end];
                    let ar = &at[r];
                    for ch in 0..d {
                        let (ez, ph) = exp_phi::<M>(dr[ch] * ar[ch]);
                        es[ch] = ez;
                        ps[ch] = ph;
                        hs[ch] = M::mul_add(ez, prev[ch], ph * bv * w[ch]);
                    }
                }
            }
            for l in (l0..l1).rev() {
                let row = bi * len + l;
                let k = (l - l0) * dn;
                let ur = &u[row * d..(row + 1) * d];
                let dr = &dt[row * d..(row + 1) * d];
                let gr = &gy[row * d..(row + 1) * d];
                let dur = &mut du[row * d..(row + 1) * d];
                let ddr = &mut ddt[row * d..(row + 1) * d];
                for ch in 0..d {
                    dskip[ch] = M::mul_add(gr[ch], ur[ch], dskip[ch]);
                    dur[ch] = gr[ch] * skip[ch];
                    w[ch] = dr[ch] * ur[ch];
                }
                let prev_all = if l == l0 { start } else { &h_buf[k - dn..k] };
                for s in 0..n {
                    let (bv, cv) = (bm[row * n + s], cm[row * n + s]);
                    let r = s * d..(s + 1) * d;
                    let prev = &prev_all[r.clone()];
                    let hs = &h_buf[k + r.start..k + r.end];
                    let es = &ez_buf[k + r.start..k + r.end];
                    let ps = &ph_buf[k + r.start..k + r.end];
                    let ar = &at[r.clone()];
                    let dar = &mut dat[r.clone()];
                    let gs = &mut g[r];
                    dc[row * n + s] += dot::<M>(gr, hs);
                    for ch in 0..d {
                        let (ez, ph, av, dv) = (es[ch], ps[ch], ar[ch], dr[ch]);
                        let gn = M::mul_add(gr[ch], cv, gs[ch]);
                        let gb = gn * bv;
                        dur[ch] = M::mul_add(gb, ph * dv, dur[ch]);
                        let dbb = gn * ur[ch];
                        let dz = M::mul_add(gn * prev[ch], ez, gb * w[ch] * dphi::<M>(dv * av, ez, ph));
                        ddr[ch] = M::mul_add(dz, av, M::mul_add(gb * ur[ch], ph, ddr[ch]));
                        dar[ch] = M::mul_add(dz, dv, dar[ch]);
                        tmp[ch] = dbb * ph * dv;
                        gs[ch] = gn * ez;
                    }
                    db[row * n + s] += lane_sum(&tmp);
                }
            }
        }
    }
    let da = transpose(&dat, n, d);
    vec![
        Some(Tensor::from_parts(x.u.shape().to_vec(), du)),
        Some(Tensor::from_parts(x.delta.shape().to_vec(), ddt)),
        Some(Tensor::from_parts(x.a.shape().to_vec(), da)),
        Some(Tensor::from_parts(x.b.shape().to_vec(), db)),
        Some(Tensor::from_parts(x.c.shape().to_vec(), dc)),
        Some(Tensor::from_parts(x.skip.shape().to_vec(), dskip)),
    ]
}
