use std::rc::Rc;

use super::{expect_rank, same_shape};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::fastmath;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Relu,
}

pub fn activation(x: Var<'_>, kind: Activation) -> Var<'_> {
    match kind {
        Activation::Silu => silu(x),
        Activation::Relu => relu(x),
    }
}

/// Elementwise op whose derivative is a function of input and output.
fn unary<'t>(
    x: Var<'t>,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var<'t> {
    let xv = x.value();
    let y = Rc::new(xv.map(f));
    let yk = y.clone();
    x.tape().push_op_rc(y, &[x], move |g, _| {
        let d = Tensor::from_parts(
            g.shape().to_vec(),
            g.data()
                .iter()
                .zip(xv.data())
                .zip(yk.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect(),
        );
        vec![Some(d)]
    })
}

/// Elementwise op backed by slice kernels for the value and for
/// `g * f'(x)`.
fn unary_kernel<'t>(
    x: Var<'t>,
    f: fn(&[f64], &mut [f64]),
    grad: fn(&[f64], &[f64], &mut [f64]),
) -> Var<'t> {
    let xv = x.value();
    let mut y = vec![0.0; xv.len()];
    f(xv.data(), &mut y);
    let y = Tensor::from_parts(xv.shape().to_vec(), y);
    x.tape().push_op(y, &[x], move |g, _| {
        let mut d = vec![0.0; g.len()];
        grad(g.data(), xv.data(), &mut d);
        vec![Some(Tensor::from_parts(g.shape().to_vec(), d))]
    })
}

pub fn silu(x: Var<'_>) -> Var<'_> {
    unary_kernel(x, fastmath::silu_slice, fastmath::silu_grad_slice)
}

pub fn relu(x: Var<'_>) -> Var<'_> {
    unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
}

pub fn sigmoid(x: Var<'_>) -> Var<'_> {
    let xv = x.value();
    let mut y = vec![0.0; xv.len()];
    fastmath::sigmoid_slice(xv.data(), &mut y);
    let y = Rc::new(Tensor::from_parts(xv.shape().to_vec(), y));
    let yk = y.clone();
    x.tape().push_op_rc(y, &[x], move |g, _| {
        vec![Some(g.zip_map(&yk, |g, y| g * y * (1.0 - y)).expect("same shape"))]
    })
}

pub fn softplus(x: Var<'_>) -> Var<'_> {
    unary_kernel(x, fastmath::softplus_slice, fastmath::sigmoid_mul_slice)
}

pub fn exp(x: Var<'_>) -> Var<'_> {
    let xv = x.value();
    let mut y = vec![0.0; xv.len()];
    fastmath::exp_slice(xv.data(), &mut y);
    let y = Rc::new(Tensor::from_parts(xv.shape().to_vec(), y));
    let yk = y.clone();
    x.tape().push_op_rc(y, &[x], move |g, _| {
        vec![Some(g.zip_map(&yk, |g, y| g * y).expect("same shape"))]
    })
}

/// Absolute value; the subgradient at 0 is taken as 0.
pub fn abs(x: Var<'_>) -> Var<'_> {
    unary(x, f64::abs, |x, _| sign(x))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn scale(x: Var<'_>, s: f64) -> Var<'_> {
    let y = x.value().map(|v| v * s);
    x.tape().push_op(y, &[x], move |g, _| vec![Some(g.map(|v| v * s))])
}

pub fn neg(x: Var<'_>) -> Var<'_> {
    scale(x, -1.0)
}

pub fn add_scalar(x: Var<'_>, s: f64) -> Var<'_> {
    let y = x.value().map(|v| v + s);
    x.tape().push_op(y, &[x], |g, _| vec![Some(g.clone())])
}

pub fn add<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    same_shape("add", a, b)?;
    let y = a.value().zip_map(&b.value(), |x, y| x + y)?;
    Ok(a
        .tape()
        .push_op(y, &[a, b], |g, _| vec![Some(g.clone()), Some(g.clone())]))
}

pub fn sub<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    same_shape("sub", a, b)?;
    let y = a.value().zip_map(&b.value(), |x, y| x - y)?;
    Ok(a
        .tape()
        .push_op(y, &[a, b], |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]))
}

pub fn mul<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    same_shape("mul", a, b)?;
    let (av, bv) = (a.value(), b.value());
    let y = av.zip_map(&bv, |x, y| x * y)?;
    Ok(a.tape().push_op(y, &[a, b], move |g, needs| {
        let ga = needs[0].then(|| g.zip_map(&bv, |g, b| g * b).unwrap());
        let gb = needs[1].then(|| g.zip_map(&av, |g, a| g * a).unwrap());
        vec![ga, gb]
    }))
}

/// Multiply `x[..., C]` by a per-channel vector `s[C]`.
pub fn mul_last<'t>(x: Var<'t>, s: Var<'t>) -> Result<Var<'t>> {
    let (xs, ss) = (x.shape(), s.shape());
    if ss.len() != 1 || xs.last() != Some(&ss[0]) {
        return Err(Error::shape("mul_last", &xs, &ss));
    }
    let c = ss[0];
    let (xv, sv) = (x.value(), s.value());
    let y = Tensor::from_parts(
        xs.clone(),
        xv.data()
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(sv.data()).map(|(a, b)| a * b))
            .collect(),
    );
    Ok(x.tape().push_op(y, &[x, s], move |g, needs| {
        let gx = needs[0].then(|| {
            Tensor::from_parts(
                g.shape().to_vec(),
                g.data()
                    .chunks_exact(c)
                    .flat_map(|row| row.iter().zip(sv.data()).map(|(a, b)| a * b))
                    .collect(),
            )
        });
        let gs = needs[1].then(|| {
            let mut acc = vec![0.0; c];
            for (grow, xrow) in g.data().chunks_exact(c).zip(xv.data().chunks_exact(c)) {
                for ((a, gv), xv) in acc.iter_mut().zip(grow).zip(xrow) {
                    *a += gv * xv;
                }
            }
            Tensor::from_parts(vec![c], acc)
        });
        vec![gx, gs]
    }))
}

/// Scale every `[H, W]` plane of `x[B, C, H, W]` by `w[B, C]`.
pub fn mul_channel<'t>(x: Var<'t>, w: Var<'t>) -> Result<Var<'t>> {
    let (xs, ws) = (x.shape(), w.shape());
    expect_rank("mul_channel", &xs, 4)?;
    if ws != xs[..2] {
        return Err(Error::shape("mul_channel", &xs, &ws));
    }
    let plane = xs[2] * xs[3];
    let (xv, wv) = (x.value(), w.value());
    let mut y = Vec::with_capacity(xv.len());
    for (p, &s) in xv.data().chunks_exact(plane).zip(wv.data()) {
        y.extend(p.iter().map(|v| v * s));
    }
    let y = Tensor::from_parts(xs, y);
    Ok(x.tape().push_op(y, &[x, w], move |g, needs| {
        let gx = needs[0].then(|| {
            let mut d = Vec::with_capacity(g.len());
            for (p, &s) in g.data().chunks_exact(plane).zip(wv.data()) {
                d.extend(p.iter().map(|v| v * s));
            }
            Tensor::from_parts(g.shape().to_vec(), d)
        });
        let gw = needs[1].then(|| {
            let d = g
                .data()
                .chunks_exact(plane)
                .zip(xv.data().chunks_exact(plane))
                .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                .collect();
            Tensor::from_parts(wv.shape().to_vec(), d)
        });
        vec![gx, gw]
    }))
}

/// Per-channel gating of `[B, C, H, W]` features: channel `c` becomes
/// `x_c * y_c` where `gated[c]`, and stays `x_c` otherwise.
pub fn gate_channels<'t>(x: Var<'t>, y: Var<'t>, gated: &[bool]) -> Result<Var<'t>> {
    same_shape("gate_channels", x, y)?;
    let xs = x.shape();
    expect_rank("gate_channels", &xs, 4)?;
    if gated.len() != xs[1] {
        return Err(Error::invalid(
            "gate_channels",
            format!("{} gate flags for {} channels", gated.len(), xs[1]),
        ));
    }
    let plane = xs[2] * xs[3];
    let c = xs[1];
    let gated: Vec<bool> = gated.to_vec();
    let (xv, yv) = (x.value(), y.value());
    let mut out = xv.data().to_vec();
    for (i, (o, yp)) in out
        .chunks_exact_mut(plane)
        .zip(yv.data().chunks_exact(plane))
        .enumerate()
    {
        if gated[i % c] {
            o.iter_mut().zip(yp).for_each(|(a, b)| *a *= b);
        }
    }
    let out = Tensor::from_parts(xs, out);
    Ok(x.tape().push_op(out, &[x, y], move |g, needs| {
        let mut gx = needs[0].then(|| g.data().to_vec());
        let mut gy = needs[1].then(|| vec![0.0; g.len()]);
        for (i, gp) in g.data().chunks_exact(plane).enumerate() {
            if !gated[i % c] {
                continue;
            }
            let r = i * plane..(i + 1) * plane;
            if let Some(gx) = &mut gx {
                for ((d, gv), yv) in gx[r.clone()].iter_mut().zip(gp).zip(&yv.data()[r.clone()]) {
                    *d = gv * yv;
                }
            }
            if let Some(gy) = &mut gy {
                for ((d, gv), xv) in gy[r.clone()].iter_mut().zip(gp).zip(&xv.data()[r]) {
                    *d = gv * xv;
                }
            }
        }
        let shape = g.shape().to_vec();
        vec![
            gx.map(|d| Tensor::from_parts(shape.clone(), d)),
            gy.map(|d| Tensor::from_parts(shape.clone(), d)),
        ]
    }))
}

pub fn sum(x: Var<'_>) -> Var<'_> {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    let y = Tensor::scalar(xv.sum());
    x.tape()
        .push_op(y, &[x], move |g, _| vec![Some(Tensor::full(&shape, g.item()))])
}

pub fn mean(x: Var<'_>) -> Var<'_> {
    let n = x.value().len() as f64;
    scale(sum(x), 1.0 / n)
}

/// Mean absolute error over all elements.
pub fn l1_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    Ok(mean(abs(sub(pred, target)?)))
}
