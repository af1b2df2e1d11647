//! Retrospective undersampling and the zero-filled reconstruction.

use super::mask::CartesianMask;
use crate::error::{Error, Result};
use crate::fft;
use crate::tensor::{ComplexTensor, Tensor};

/// Mask the DC-centered spectrum of `image[..., H, W]` column-wise.
///
/// Returns the masked, DC-centered k-space and the real part of its
/// inverse transform (the zero-filled image).
pub fn undersample(image: &Tensor, mask: &CartesianMask) -> Result<(ComplexTensor, Tensor)> {
    let s = image.shape();
    if s.len() < 2 || s[s.len() - 1] != mask.width {
        return Err(Error::invalid(
            "undersample",
            format!("mask of width {} for image {s:?}", mask.width),
        ));
    }
    if !image.is_finite() {
        return Err(Error::NonFinite("undersample input".into()));
    }
    let k = fft::fft2_real(image)?;
    let centered = ComplexTensor::new(fft::fftshift2(&k.re)?, fft::fftshift2(&k.im)?)?;
    let m = mask.values();
    let apply = |t: &Tensor| {
        let mut t = t.clone();
        for row in t.data_mut().chunks_exact_mut(mask.width) {
            row.iter_mut().zip(&m).for_each(|(v, w)| *v *= w);
        }
        t
    };
    let masked = ComplexTensor::new(apply(&centered.re), apply(&centered.im))?;
    let unshifted = ComplexTensor::new(fft::ifftshift2(&masked.re)?, fft::ifftshift2(&masked.im)?)?;
    let zero_filled = fft::ifft2(&unshifted)?.re;
    Ok((masked, zero_filled))
}

/// Zero-filled image only.
pub fn zero_filled(image: &Tensor, mask: &CartesianMask) -> Result<Tensor> {
    Ok(undersample(image, mask)?.1)
}
