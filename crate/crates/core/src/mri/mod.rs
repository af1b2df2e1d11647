//! Sampling model: Cartesian masks and retrospective undersampling.

pub mod mask;
pub mod undersample;

pub use mask::{center_block, default_center_fraction, sampled_columns, CartesianMask};
pub use undersample::{undersample, zero_filled};
