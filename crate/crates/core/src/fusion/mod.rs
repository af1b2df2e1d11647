//! Cross-modal fusion: spatial (state-space cross fusion), frequency
//! (amplitude/phase fusion) and the channel gating that joins them before
//! decoding.

pub mod asff;
pub mod decoder;
pub mod sahm;
pub mod sff;
pub mod tcm;

pub use asff::{gated_channels, threshold, Asff, DEFAULT_ALPHA};
pub use decoder::Decoder;
pub use sahm::{reduced_dim, Sahm};
pub use sff::{PointwiseStack, Sff};
pub use tcm::{tcm_fuse, Tcm, TcmConfig, TcmProjection, TcmStack};
