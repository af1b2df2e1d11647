//! Diagonal state-space models: discretization, reference and fast scans,
//! the fused selective scan and the Mamba block built on it.

pub mod block;
pub mod scan;
pub mod selective;
pub mod sequence;
pub mod zoh;

pub use block::{DirectionalSsm, MambaBlock, MambaConfig, SsmBranch, SsmConfig};
pub use scan::{
    conv_kernel, prefix_affine, scan_conv_mode, scan_parallel, scan_sequential, Discretized,
    SsmParams, StepParam,
};
pub use selective::selective_scan;
pub use sequence::{image_to_sequence, sequence_to_image, ScanDir, SeqOrder};
pub use zoh::zoh_discretize;
