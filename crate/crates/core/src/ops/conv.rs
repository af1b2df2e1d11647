use super::expect_rank;
use super::gemm::{gemm, MatRef};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Unfold one `[Cin, H, W]` image into `[Cin*kh*kw, H*W]` patch columns with
/// zero padding so the output keeps the spatial size.
fn im2col(x: &[f64], cin: usize, h: usize, w: usize, kh: usize, kw: usize, cols: &mut [f64]) {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let hw = h * w;
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = (c * kh + dy) * kw + dx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let oy = dy as isize - ph;
                let ox = dx as isize - pw;
                for i in 0..h {
                    let si = i as isize + oy;
                    let drow = &mut dst[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let srow = &plane[si as usize * w..(si as usize + 1) * w];
                    for (j, d) in drow.iter_mut().enumerate() {
                        let sj = j as isize + ox;
                        *d = if sj >= 0 && sj < w as isize {
                            srow[sj as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into the image.
fn col2im(cols: &[f64], cin: usize, h: usize, w: usize, kh: usize, kw: usize, x: &mut [f64]) {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let hw = h * w;
    for c in 0..cin {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = (c * kh + dy) * kw + dx;
                let src = &cols[row * hw..(row + 1) * hw];
                let oy = dy as isize - ph;
                let ox = dx as isize - pw;
                for i in 0..h {
                    let si = i as isize + oy;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let prow = &mut plane[si as usize * w..(si as usize + 1) * w];
                    for (j, s) in src[i * w..(i + 1) * w].iter().enumerate() {
                        let sj = j as isize + ox;
                        if sj >= 0 && sj < w as isize {
                            prow[sj as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Same-size zero-padded 2D cross-correlation.
///
/// `x[B, Cin, H, W]`, `kernel[Cout, Cin, kh, kw]` with odd extents, optional
/// `bias[Cout]`; returns `[B, Cout, H, W]`.
pub fn conv2d<'t>(x: Var<'t>, kernel: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
    let (xs, ks) = (x.shape(), kernel.shape());
    expect_rank("conv2d input", &xs, 4)?;
    expect_rank("conv2d kernel", &ks, 4)?;
    let [b, cin, h, w] = [xs[0], xs[1], xs[2], xs[3]];
    let [cout, kcin, kh, kw] = [ks[0], ks[1], ks[2], ks[3]];
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::UnsupportedKernel { kh, kw });
    }
    if kcin != cin {
        return Err(Error::shape("conv2d", &xs, &ks));
    }
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(Error::shape("conv2d bias", &ks, &bias.shape()));
        }
    }
    let hw = h * w;
    let ck = cin * kh * kw;
    let pointwise = kh == 1 && kw == 1;
    let (xv, kv) = (x.value(), kernel.value());
    let bv = bias.map(|b| b.value());

    let mut out = vec![0.0; b * cout * hw];
    let mut cols = if pointwise { vec![] } else { vec![0.0; ck * hw] };
    for n in 0..b {
        let xin = &xv.data()[n * cin * hw..(n + 1) * cin * hw];
        let o = &mut out[n * cout * hw..(n + 1) * cout * hw];
        if let Some(bv) = &bv {
            for (plane, &bb) in o.chunks_exact_mut(hw).zip(bv.data()) {
                plane.fill(bb);
            }
        }
        let src = if pointwise {
            xin
        } else {
            im2col(xin, cin, h, w, kh, kw, &mut cols);
            &cols
        };
        gemm(
            MatRef::row_major(kv.data(), cout, ck),
            MatRef::row_major(src, ck, hw),
            o,
            1.0,
        );
    }
    let y = Tensor::from_parts(vec![b, cout, h, w], out);

    let mut inputs = vec![x, kernel];
    inputs.extend(bias);
    Ok(x.tape().push_op(y, &inputs, move |g, needs| {
        let mut gx = needs[0].then(|| vec![0.0; b * cin * hw]);
        let mut gk = needs[1].then(|| vec![0.0; cout * ck]);
        let mut cols = if pointwise { vec![] } else { vec![0.0; ck * hw] };
        let mut dcols = if pointwise { vec![] } else { vec![0.0; ck * hw] };
        for n in 0..b {
            let gn = MatRef::row_major(&g.data()[n * cout * hw..(n + 1) * cout * hw], cout, hw);
            let xin = &xv.data()[n * cin * hw..(n + 1) * cin * hw];
            if let Some(gk) = &mut gk {
                let src = if pointwise {
                    xin
                } else {
                    im2col(xin, cin, h, w, kh, kw, &mut cols);
                    &cols
                };
                gemm(gn, MatRef::row_major(src, ck, hw).t(), gk, 1.0);
            }
            if let Some(gx) = &mut gx {
                let dst = &mut gx[n * cin * hw..(n + 1) * cin * hw];
                let kt = MatRef::row_major(kv.data(), cout, ck).t();
                if pointwise {
                    gemm(kt, gn, dst, 0.0);
                } else {
                    gemm(kt, gn, &mut dcols, 0.0);
                    col2im(&dcols, cin, h, w, kh, kw, dst);
                }
            }
        }
        let mut grads = vec![
            gx.map(|d| Tensor::from_parts(vec![b, cin, h, w], d)),
            gk.map(|d| Tensor::from_parts(vec![cout, cin, kh, kw], d)),
        ];
        if needs.len() == 3 {
            grads.push(needs[2].then(|| {
                let mut d = vec![0.0; cout];
                for (i, plane) in g.data().chunks_exact(hw).enumerate() {
                    d[i % cout] += plane.iter().sum::<f64>();
                }
                Tensor::from_parts(vec![cout], d)
            }));
        }
        grads
    }))
}

/// Per-channel causal convolution over the sequence axis of `x[B, L, C]`:
/// `y[t, c] = bias[c] + sum_j kernel[c, j] * x[t - j, c]`, with `x` taken as
/// zero before the start. Output position `t` depends only on inputs `<= t`.
pub fn conv1d_depthwise<'t>(
    x: Var<'t>,
    kernel: Var<'t>,
    bias: Option<Var<'t>>,
) -> Result<Var<'t>> {
    let (xs, ks) = (x.shape(), kernel.shape());
    expect_rank("conv1d_depthwise input", &xs, 3)?;
    expect_rank("conv1d_depthwise kernel", &ks, 2)?;
    let [b, l, c] = [xs[0], xs[1], xs[2]];
    let kw = ks[1];
    if ks[0] != c {
        return Err(Error::shape("conv1d_depthwise", &xs, &ks));
    }
    if let Some(bias) = bias {
        if bias.shape() != [c] {
            return Err(Error::shape("conv1d_depthwise bias", &ks, &bias.shape()));
        }
    }
    let (xv, kv) = (x.value(), kernel.value());
    let bv = bias.map(|b| b.value());
    // kernel transposed to [kw, C] so the inner loop runs over channels
    let kt: Vec<f64> = (0..kw)
        .flat_map(|j| (0..c).map(move |ch| (j, ch)))
        .map(|(j, ch)| kv.data()[ch * kw + j])
        .collect();

    let mut out = vec![0.0; b * l * c];
    for n in 0..b {
        let xin = &xv.data()[n * l * c..(n + 1) * l * c];
        let o = &mut out[n * l * c..(n + 1) * l * c];
        for t in 0..l {
            let orow = &mut o[t * c..(t + 1) * c];
            if let Some(bv) = &bv {
                orow.copy_from_slice(bv.data());
            }
            for j in 0..kw.min(t + 1) {
                let xrow = &xin[(t - j) * c..(t - j + 1) * c];
                let krow = &kt[j * c..(j + 1) * c];
                for ((ov, xv), kv) in orow.iter_mut().zip(xrow).zip(krow) {
                    *ov += kv * xv;
                }
            }
        }
    }
    let y = Tensor::from_parts(vec![b, l, c], out);

    let mut inputs = vec![x, kernel];
    inputs.extend(bias);
    Ok(x.tape().push_op(y, &inputs, move |g, needs| {
        let mut gx = needs[0].then(|| vec![0.0; b * l * c]);
        let mut gkt = vec![0.0; kw * c];
        for n in 0..b {
            let gn = &g.data()[n * l * c..(n + 1) * l * c];
            let xin = &xv.data()[n * l * c..(n + 1) * l * c];
            for t in 0..l {
                let grow = &gn[t * c..(t + 1) * c];
                for j in 0..kw.min(t + 1) {
                    let s = (t - j) * c;
                    if let Some(gx) = &mut gx {
                        let krow = &kt[j * c..(j + 1) * c];
                        let dst = &mut gx[n * l * c + s..n * l * c + s + c];
                        for ((d, gv), kv) in dst.iter_mut().zip(grow).zip(krow) {
                            *d += gv * kv;
                        }
                    }
                    if needs[1] {
                        let xrow = &xin[s..s + c];
                        for ((d, gv), xv) in gkt[j * c..(j + 1) * c].iter_mut().zip(grow).zip(xrow)
                        {
                            *d += gv * xv;
                        }
                    }
                }
            }
        }
        let gk = needs[1].then(|| {
            let mut d = vec![0.0; c * kw];
            for j in 0..kw {
                for ch in 0..c {
                    d[ch * kw + j] = gkt[j * c + ch];
                }
            }
            Tensor::from_parts(vec![c, kw], d)
        });
        let mut grads = vec![gx.map(|d| Tensor::from_parts(vec![b, l, c], d)), gk];
        if needs.len() == 3 {
            grads.push(needs[2].then(|| {
                let mut d = vec![0.0; c];
                for row in g.data().chunks_exact(c) {
                    d.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                Tensor::from_parts(vec![c], d)
            }));
        }
        grads
    }))
}
