//! MMRI raster files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MMRI"
//! 4       2     version (u16) = 1
//! 6       4     height (u32)
//! 10      4     width (u32)
//! 14      4     channels (u32)
//! 18      8     reserved, zero
//! 26      ...   f32 values, channel planes of row-major H x W
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MMRI";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 26;

/// Encode `[H, W]` (one channel) or `[C, H, W]`.
pub fn encode(x: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = match *x.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        ref s => {
            return Err(Error::invalid("raster", format!("expected [H, W] or [C, H, W], got {s:?}")))
        }
    };
    if !x.is_finite() {
        return Err(Error::NonFinite("raster payload".into()));
    }
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| Error::invalid("raster", format!("dimension {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * x.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [h, w, c] {
        out.extend_from_slice(&dim(v)?.to_le_bytes());
    }
    out.extend_from_slice(&[0u8; 8]);
    for &v in x.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decode to `[C, H, W]`.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing MMRI magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt(format!("header truncated at {} bytes", bytes.len())));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported MMRI version {version}")));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (word(6), word(10), word(14));
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::Corrupt(format!("dimensions {h}x{w}x{c} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if Some(payload.len()) != count.checked_mul(4) {
        return Err(Error::Corrupt(format!(
            "payload holds {} bytes, header declares {c}x{h}x{w} f32 values",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(&[c, h, w], data)
}

pub fn save_raster(x: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(x)?)?;
    Ok(())
}

/// Load a `[C, H, W]` tensor.
pub fn load_raster(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}

/// Load a single-channel raster as `[H, W]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let x = load_raster(path)?;
    if x.dim(0) != 1 {
        return Err(Error::Format(format!(
            "{} has {} channels, expected 1",
            path.display(),
            x.dim(0)
        )));
    }
    let (h, w) = (x.dim(1), x.dim(2));
    x.into_reshaped(&[h, w])
}
