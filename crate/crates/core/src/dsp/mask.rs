use ndarray::Array2;

use super::ComplexSpectrogram;
use crate::bits::MaskMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// 1 where the speech magnitude is at least the noise magnitude (ties keep speech).
pub fn ideal_binary_mask<S: Real>(
    speech: &ComplexSpectrogram<S>,
    noise: &ComplexSpectrogram<S>,
) -> Result<MaskMatrix> {
    speech.check_same_shape(noise, "ideal binary mask")?;
    let (rows, cols) = speech.frames.dim();
    let mut mask = MaskMatrix::zeros(rows, cols);
    for ((t, f), s) in speech.frames.indexed_iter() {
        if s.norm_sqr() >= noise.frames[[t, f]].norm_sqr() {
            mask.set(t, f, true);
        }
    }
    Ok(mask)
}

/// Scales each complex bin by a mask value in [0, 1].
pub fn apply_mask<S: Real>(
    mixture: &ComplexSpectrogram<S>,
    mask: &Array2<S>,
) -> Result<ComplexSpectrogram<S>> {
    if mask.dim() != mixture.frames.dim() {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} vs spectrogram {:?}",
            mask.dim(),
            mixture.frames.dim()
        )));
    }
    if let Some(v) = mask.iter().find(|&&v| !(v >= S::zero() && v <= S::one())) {
        return Err(Error::OutOfRange(format!("mask value {v} outside [0, 1]")));
    }
    let mut out = mixture.clone();
    out.frames.zip_mut_with(mask, |c, &m| *c = c.scale(m));
    Ok(out)
}
