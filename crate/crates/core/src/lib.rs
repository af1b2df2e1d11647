pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
mod fastmath;
pub mod fft;
pub mod fusion;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod mri;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use autodiff::{ParamId, ParamStore, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{ComplexTensor, Tensor};
