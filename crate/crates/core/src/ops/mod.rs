//! Differentiable operations on [`Var`](crate::autodiff::Var)s.
//!
//! Each op computes its forward value eagerly and records a backward closure
//! on the tape. Shape errors are reported before anything is recorded.

mod conv;
mod elementwise;
pub(crate) mod gemm;
mod linear;
mod norm;
mod shape;
pub(crate) mod spectral;

pub use conv::{conv1d_depthwise, conv2d};
pub use elementwise::{
    abs, activation, add, add_scalar, exp, gate_channels, l1_loss, mean, mul, mul_channel,
    mul_last, neg, relu, scale, sigmoid, silu, softplus, sub, sum, Activation,
};
pub use linear::linear;
pub use norm::{batch_norm, global_avg_pool, layer_norm, softmax, BnMode};
pub use shape::{
    concat_channels, nchw_to_seq, permute_seq, reshape, select_last, seq_to_nchw, stack_last,
};
pub use spectral::{amplitude, complex, fft2, ifft2, ifft2_real, imag, phase, real, recompose};

use crate::autodiff::Var;
use crate::error::{Error, Result};

pub(crate) fn same_shape(op: &'static str, a: Var<'_>, b: Var<'_>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape(op, &sa, &sb));
    }
    Ok(())
}

pub(crate) fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::invalid(
            op,
            format!("expected rank {rank}, got shape {shape:?}"),
        ));
    }
    Ok(())
}
