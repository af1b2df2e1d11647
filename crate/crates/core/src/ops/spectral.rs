//! Fourier-domain ops. Complex values travel through the tape packed as a
//! real tensor with a leading axis of 2: index 0 holds the real part and
//! index 1 the imaginary part.

use std::rc::Rc;

use super::same_shape;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::fastmath;
use crate::fft;
use crate::tensor::{ComplexTensor, Tensor};

fn unpacked_shape(op: &'static str, s: &[usize]) -> Result<Vec<usize>> {
    match s {
        [2, rest @ ..] if rest.len() >= 2 => Ok(rest.to_vec()),
        _ => Err(Error::invalid(op, format!("expected packed complex [2, ..., H, W], got {s:?}"))),
    }
}

fn plane_size(shape: &[usize]) -> f64 {
    (shape[shape.len() - 2] * shape[shape.len() - 1]) as f64
}

/// Unnormalized 2D transform of a real `[..., H, W]` input.
pub fn fft2(x: Var<'_>) -> Result<Var<'_>> {
    let xs = x.shape();
    let y = fft::fft2_real(&x.value())?.pack();
    let n = if xs.len() >= 2 { plane_size(&xs) } else { 0.0 };
    Ok(x.tape().push_op(y, &[x], move |g, _| {
        let g = ComplexTensor::unpack(g).expect("packed gradient");
        let mut back = fft::ifft2(&g).expect("fft2 backward").re;
        back.scale_inplace(n);
        vec![Some(back)]
    }))
}

/// `1/(H*W)`-normalized inverse transform of a packed complex input.
pub fn ifft2(x: Var<'_>) -> Result<Var<'_>> {
    let shape = unpacked_shape("ifft2", &x.shape())?;
    let n = plane_size(&shape);
    let y = fft::ifft2(&ComplexTensor::unpack(&x.value())?)?.pack();
    Ok(x.tape().push_op(y, &[x], move |g, _| {
        let g = ComplexTensor::unpack(g).expect("packed gradient");
        let mut back = fft::fft2(&g).expect("ifft2 backward").pack();
        back.scale_inplace(1.0 / n);
        vec![Some(back)]
    }))
}

/// Real part of [`ifft2`].
pub fn ifft2_real(x: Var<'_>) -> Result<Var<'_>> {
    real(ifft2(x)?)
}

fn split_op<'t>(
    op: &'static str,
    x: Var<'t>,
    f: impl Fn(f64, f64) -> f64,
    df: impl Fn(f64, f64) -> (f64, f64) + 'static,
) -> Result<Var<'t>> {
    let shape = unpacked_shape(op, &x.shape())?;
    let xv = x.value();
    let n = xv.len() / 2;
    let (re, im) = xv.data().split_at(n);
    let y = Tensor::from_parts(shape, re.iter().zip(im).map(|(&r, &i)| f(r, i)).collect());
    let packed = x.shape();
    Ok(x.tape().push_op(y, &[x], move |g, _| {
        let (re, im) = xv.data().split_at(n);
        let mut d = vec![0.0; 2 * n];
        for k in 0..n {
            let (dr, di) = df(re[k], im[k]);
            d[k] = g.data()[k] * dr;
            d[n + k] = g.data()[k] * di;
        }
        vec![Some(Tensor::from_parts(packed.clone(), d))]
    }))
}

pub fn real(x: Var<'_>) -> Result<Var<'_>> {
    split_op("real", x, |r, _| r, |_, _| (1.0, 0.0))
}

pub fn imag(x: Var<'_>) -> Result<Var<'_>> {
    split_op("imag", x, |_, i| i, |_, _| (0.0, 1.0))
}

/// `sqrt(re^2 + im^2)`; the gradient at the origin is taken as zero.
pub fn amplitude(x: Var<'_>) -> Result<Var<'_>> {
    split_op("amplitude", x, f64::hypot, |r, i| {
        let a = r.hypot(i);
        if a == 0.0 {
            (0.0, 0.0)
        } else {
            (r / a, i / a)
        }
    })
}

/// Phase angle in `(-pi, pi]`, defined as 0 where the amplitude is 0.
pub fn phase_f(re: f64, im: f64) -> f64 {
    if re == 0.0 && im == 0.0 {
        return 0.0;
    }
    // `+ 0.0` turns a negative zero into a positive one so that the negative
    // real axis maps to +pi rather than -pi
    (im + 0.0).atan2(re)
}

pub fn phase(x: Var<'_>) -> Result<Var<'_>> {
    split_op("phase", x, phase_f, |r, i| {
        let a2 = r * r + i * i;
        if a2 == 0.0 {
            (0.0, 0.0)
        } else {
            (-i / a2, r / a2)
        }
    })
}

/// Pack real and imaginary parts into one complex tensor.
pub fn complex<'t>(re: Var<'t>, im: Var<'t>) -> Result<Var<'t>> {
    same_shape("complex", re, im)?;
    let s = re.shape();
    let y = ComplexTensor {
        re: (*re.value()).clone(),
        im: (*im.value()).clone(),
    }
    .pack();
    Ok(re.tape().push_op(y, &[re, im], move |g, _| {
        let n = g.len() / 2;
        vec![
            Some(Tensor::from_parts(s.clone(), g.data()[..n].to_vec())),
            Some(Tensor::from_parts(s.clone(), g.data()[n..].to_vec())),
        ]
    }))
}

/// Polar to Cartesian: `A cos P + i A sin P`.
pub fn recompose<'t>(amp: Var<'t>, phase: Var<'t>) -> Result<Var<'t>> {
    same_shape("recompose", amp, phase)?;
    let s = amp.shape();
    let (av, pv) = (amp.value(), phase.value());
    let n = av.len();
    let (mut sin, mut cos) = (vec![0.0; n], vec![0.0; n]);
    fastmath::sin_cos_slice(pv.data(), &mut sin, &mut cos);
    let mut out = vec![0.0; 2 * n];
    for k in 0..n {
        out[k] = av.data()[k] * cos[k];
        out[n + k] = av.data()[k] * sin[k];
    }
    let mut packed = vec![2];
    packed.extend(&s);
    let y = Rc::new(Tensor::from_parts(packed, out));
    Ok(amp.tape().push_op_rc(y, &[amp, phase], move |g, needs| {
        let (gr, gi) = g.data().split_at(n);
        let ga = needs[0].then(|| {
            Tensor::from_parts(
                s.clone(),
                (0..n).map(|k| gr[k] * cos[k] + gi[k] * sin[k]).collect(),
            )
        });
        let gp = needs[1].then(|| {
            Tensor::from_parts(
                s.clone(),
                (0..n)
                    .map(|k| av.data()[k] * (gi[k] * cos[k] - gr[k] * sin[k]))
                    .collect(),
            )
        });
        vec![ga, gp]
    }))
}
