//! 2D discrete Fourier transforms over the two trailing axes.
//!
//! Forward transforms are unnormalized; inverse transforms carry the
//! `1/(H*W)` factor. Any extent is supported (rustfft picks mixed-radix or
//! Bluestein plans as needed).

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Tensor};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

fn plane_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [.., h, w] => Ok((*h, *w)),
        _ => Err(Error::invalid("fft2", format!("need at least 2 axes, got {shape:?}"))),
    }
}

/// In-place transform of every `h x w` plane in `buf`.
fn transform(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    if buf.is_empty() {
        return;
    }
    let (row, col) = (plan(w, inverse), plan(h, inverse));
    let mut scratch =
        vec![Complex64::default(); row.get_inplace_scratch_len().max(col.get_inplace_scratch_len())];
    row.process_with_scratch(buf, &mut scratch);
    let mut t = vec![Complex64::default(); h * w];
    for plane in buf.chunks_exact_mut(h * w) {
        for i in 0..h {
            for j in 0..w {
                t[j * h + i] = plane[i * w + j];
            }
        }
        col.process_with_scratch(&mut t, &mut scratch);
        for i in 0..h {
            for j in 0..w {
                plane[i * w + j] = t[j * h + i];
            }
        }
    }
    if inverse {
        let s = 1.0 / (h * w) as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }
}

fn run(re: &[f64], im: Option<&[f64]>, shape: &[usize], inverse: bool) -> Result<ComplexTensor> {
    let (h, w) = plane_dims(shape)?;
    let mut buf: Vec<Complex64> = match im {
        Some(im) => re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect(),
        None => re.iter().map(|&r| Complex64::new(r, 0.0)).collect(),
    };
    transform(&mut buf, h, w, inverse);
    let shape = shape.to_vec();
    Ok(ComplexTensor {
        re: Tensor::from_parts(shape.clone(), buf.iter().map(|c| c.re).collect()),
        im: Tensor::from_parts(shape, buf.iter().map(|c| c.im).collect()),
    })
}

/// Forward transform of a real tensor.
pub fn fft2_real(x: &Tensor) -> Result<ComplexTensor> {
    run(x.data(), None, x.shape(), false)
}

pub fn fft2(x: &ComplexTensor) -> Result<ComplexTensor> {
    run(x.re.data(), Some(x.im.data()), x.shape(), false)
}

pub fn ifft2(x: &ComplexTensor) -> Result<ComplexTensor> {
    run(x.re.data(), Some(x.im.data()), x.shape(), true)
}

fn roll2(x: &Tensor, forward: bool) -> Result<Tensor> {
    let (h, w) = plane_dims(x.shape())?;
    let (sh, sw) = if forward { (h / 2, w / 2) } else { (h.div_ceil(2), w.div_ceil(2)) };
    let mut out = vec![0.0; x.len()];
    if h * w > 0 {
        for (src, dst) in x.data().chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
            for i in 0..h {
                for j in 0..w {
                    dst[((i + sh) % h) * w + (j + sw) % w] = src[i * w + j];
                }
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Move the zero-frequency bin of each plane to the centre.
pub fn fftshift2(x: &Tensor) -> Result<Tensor> {
    roll2(x, true)
}

/// Inverse of [`fftshift2`] (they differ for odd extents).
pub fn ifftshift2(x: &Tensor) -> Result<Tensor> {
    roll2(x, false)
}
