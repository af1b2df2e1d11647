use super::gemm::{gemm, matmul, MatRef};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `y = x W + b` over the last axis of `x[..., Din]` with `W[Din, Dout]`.
pub fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
    let (xs, ws) = (x.shape(), w.shape());
    if ws.len() != 2 || xs.last() != Some(&ws[0]) {
        return Err(Error::shape("linear", &xs, &ws));
    }
    let (din, dout) = (ws[0], ws[1]);
    if let Some(b) = b {
        let bs = b.shape();
        if bs != [dout] {
            return Err(Error::shape("linear bias", &ws, &bs));
        }
    }
    let rows = x.value().len() / din.max(1);
    let (xv, wv) = (x.value(), w.value());

    let xm = MatRef::row_major(xv.data(), rows, din);
    let wm = MatRef::row_major(wv.data(), din, dout);
    let out = match b {
        Some(b) => {
            let bv = b.value();
            let mut o = Vec::with_capacity(rows * dout);
            for _ in 0..rows {
                o.extend_from_slice(bv.data());
            }
            gemm(xm, wm, &mut o, 1.0);
            o
        }
        None => matmul(xm, wm),
    };
    let mut shape = xs.clone();
    *shape.last_mut().unwrap() = dout;
    let y = Tensor::from_parts(shape, out);

    let mut inputs = vec![x, w];
    inputs.extend(b);
    Ok(x.tape().push_op(y, &inputs, move |g, needs| {
        let gm = MatRef::row_major(g.data(), rows, dout);
        let gx = needs[0].then(|| {
            let d = matmul(gm, MatRef::row_major(wv.data(), din, dout).t());
            Tensor::from_parts(xv.shape().to_vec(), d)
        });
        let gw = needs[1].then(|| {
            let d = matmul(MatRef::row_major(xv.data(), rows, din).t(), gm);
            Tensor::from_parts(vec![din, dout], d)
        });
        let mut grads = vec![gx, gw];
        if needs.len() == 3 {
            grads.push(needs[2].then(|| {
                let mut d = vec![0.0; dout];
                for row in g.data().chunks_exact(dout) {
                    d.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                Tensor::from_parts(vec![dout], d)
            }));
        }
        grads
    }))
}
