//! Synthetic paired phantoms and the raster file format.

pub mod dataset;
pub mod phantom;
pub mod raster;

pub use dataset::{load_split, pair_seed, synthesize, write_split, ManifestRow, Pair};
pub use phantom::{gen_phantom_pair, PhantomSpec};
pub use raster::{load_image, load_raster, save_raster};
