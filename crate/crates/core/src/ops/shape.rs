use std::rc::Rc;

use super::expect_rank;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn reshape<'t>(x: Var<'t>, shape: &[usize]) -> Result<Var<'t>> {
    let from = x.shape();
    let y = x.value().reshape(shape)?;
    Ok(x.tape().push_op(y, &[x], move |g, _| {
        vec![Some(Tensor::from_parts(from.clone(), g.data().to_vec()))]
    }))
}

/// `[B, C, H, W] -> [B, H*W, C]` (row-major pixel order).
pub fn nchw_to_seq(x: Var<'_>) -> Result<Var<'_>> {
    let s = x.shape();
    expect_rank("nchw_to_seq", &s, 4)?;
    let (b, c, l) = (s[0], s[1], s[2] * s[3]);
    let y = Tensor::from_parts(vec![b, l, c], transpose_inner(&x.value(), b, c, l));
    Ok(x.tape().push_op(y, &[x], move |g, _| {
        vec![Some(Tensor::from_parts(s.clone(), transpose_inner(g, b, l, c)))]
    }))
}

/// `[B, H*W, C] -> [B, C, H, W]`, the inverse of [`nchw_to_seq`].
pub fn seq_to_nchw(x: Var<'_>, h: usize, w: usize) -> Result<Var<'_>> {
    let s = x.shape();
    expect_rank("seq_to_nchw", &s, 3)?;
    let (b, l, c) = (s[0], s[1], s[2]);
    if l != h * w {
        return Err(Error::invalid(
            "seq_to_nchw",
            format!("sequence length {l} is not {h}x{w}"),
        ));
    }
    let y = Tensor::from_parts(vec![b, c, h, w], transpose_inner(&x.value(), b, l, c));
    Ok(x.tape().push_op(y, &[x], move |g, _| {
        vec![Some(Tensor::from_parts(s.clone(), transpose_inner(g, b, c, l)))]
    }))
}

/// Swap the two trailing axes of a `[b, r, c]` block array.
fn transpose_inner(x: &Tensor, b: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for n in 0..b {
        let src = &x.data()[n * r * c..(n + 1) * r * c];
        let dst = &mut out[n * r * c..(n + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

/// Reorder the sequence axis of `x[B, L, C]`: `y[:, i, :] = x[:, perm[i], :]`.
pub fn permute_seq<'t>(x: Var<'t>, perm: Rc<[usize]>) -> Result<Var<'t>> {
    let s = x.shape();
    expect_rank("permute_seq", &s, 3)?;
    let (b, l, c) = (s[0], s[1], s[2]);
    if perm.len() != l {
        return Err(Error::invalid(
            "permute_seq",
            format!("permutation of length {} for sequence of {l}", perm.len()),
        ));
    }
    let gather = |src: &[f64], perm: &[usize]| {
        let mut out = vec![0.0; src.len()];
        for n in 0..b {
            for (i, &p) in perm.iter().enumerate() {
                let o = n * l * c;
                out[o + i * c..o + (i + 1) * c].copy_from_slice(&src[o + p * c..o + (p + 1) * c]);
            }
        }
        out
    };
    let y = Tensor::from_parts(s.clone(), gather(x.value().data(), &perm));
    Ok(x.tape().push_op(y, &[x], move |g, _| {
        let mut d = vec![0.0; g.len()];
        for n in 0..b {
            let o = n * l * c;
            for (i, &p) in perm.iter().enumerate() {
                d[o + p * c..o + (p + 1) * c].copy_from_slice(&g.data()[o + i * c..o + (i + 1) * c]);
            }
        }
        vec![Some(Tensor::from_parts(s.clone(), d))]
    }))
}

/// Concatenate `[B, C1, ...]` and `[B, C2, ...]` along axis 1.
pub fn concat_channels<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(Error::shape("concat_channels", &sa, &sb));
    }
    let bsz = sa[0];
    let inner: usize = sa[2..].iter().product();
    let (na, nb) = (sa[1] * inner, sb[1] * inner);
    let (av, bv) = (a.value(), b.value());
    let mut out = Vec::with_capacity(bsz * (na + nb));
    for n in 0..bsz {
        out.extend_from_slice(&av.data()[n * na..(n + 1) * na]);
        out.extend_from_slice(&bv.data()[n * nb..(n + 1) * nb]);
    }
    let mut shape = sa.clone();
    shape[1] += sb[1];
    let y = Tensor::from_parts(shape, out);
    Ok(a.tape().push_op(y, &[a, b], move |g, _| {
        let mut ga = Vec::with_capacity(bsz * na);
        let mut gb = Vec::with_capacity(bsz * nb);
        for chunk in g.data().chunks_exact(na + nb) {
            ga.extend_from_slice(&chunk[..na]);
            gb.extend_from_slice(&chunk[na..]);
        }
        vec![
            Some(Tensor::from_parts(sa.clone(), ga)),
            Some(Tensor::from_parts(sb.clone(), gb)),
        ]
    }))
}

/// Stack equally shaped inputs along a new trailing axis.
pub fn stack_last<'t>(xs: &[Var<'t>]) -> Result<Var<'t>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("stack_last", "no inputs"))?;
    let s = first.shape();
    for x in xs {
        if x.shape() != s {
            return Err(Error::shape("stack_last", &s, &x.shape()));
        }
    }
    let k = xs.len();
    let vals: Vec<Rc<Tensor>> = xs.iter().map(|x| x.value()).collect();
    let n = vals[0].len();
    let mut out = vec![0.0; n * k];
    for (j, v) in vals.iter().enumerate() {
        for (i, &e) in v.data().iter().enumerate() {
            out[i * k + j] = e;
        }
    }
    let mut shape = s.clone();
    shape.push(k);
    let y = Tensor::from_parts(shape, out);
    Ok(first.tape().push_op(y, xs, move |g, needs| {
        (0..k)
            .map(|j| {
                needs[j].then(|| {
                    Tensor::from_parts(s.clone(), (0..n).map(|i| g.data()[i * k + j]).collect())
                })
            })
            .collect()
    }))
}

/// Slice `index` out of the trailing axis.
pub fn select_last(x: Var<'_>, index: usize) -> Result<Var<'_>> {
    let s = x.shape();
    let k = *s.last().ok_or_else(|| Error::invalid("select_last", "scalar input"))?;
    if index >= k {
        return Err(Error::invalid(
            "select_last",
            format!("index {index} out of range for trailing extent {k}"),
        ));
    }
    let xv = x.value();
    let n = xv.len() / k;
    let y = Tensor::from_parts(
        s[..s.len() - 1].to_vec(),
        (0..n).map(|i| xv.data()[i * k + index]).collect(),
    );
    Ok(x.tape().push_op(y, &[x], move |g, _| {
        let mut d = vec![0.0; n * k];
        for (i, v) in g.data().iter().enumerate() {
            d[i * k + index] = *v;
        }
        vec![Some(Tensor::from_parts(s.clone(), d))]
    }))
}
