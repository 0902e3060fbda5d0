//! Audio framing, spectral features, ideal binary masks and mixing.

mod features;
mod mask;
mod mix;
mod stft;
pub mod wav;

pub use features::{make_features, mel_filterbank, FeatureKind, FeatureMatrix, MelFilterbank};
pub use mask::{apply_mask, ideal_binary_mask};
pub use mix::{mix_at_snr, signal_power, Mixture};
pub use stft::{hann_window, istft, stft};

use ndarray::Array2;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Mono audio samples at a fixed rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip<S> {
    pub samples: Vec<S>,
    pub sample_rate: u32,
}

impl<S: Real> AudioClip<S> {
    pub fn new(samples: Vec<S>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter(
                "sample rate must be positive".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![S::zero(); len],
            sample_rate,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Short-time spectrum: one row per frame, `frame_size / 2 + 1` bins per row.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram<S> {
    pub frames: Array2<Complex<S>>,
    pub frame_size: usize,
    pub hop: usize,
    /// Length of the analysed signal, used to trim the padded tail on resynthesis.
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl<S: Real> ComplexSpectrogram<S> {
    #[inline]
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    #[inline]
    pub fn n_bins(&self) -> usize {
        self.frames.ncols()
    }

    pub fn magnitudes(&self) -> Array2<S> {
        self.frames.mapv(|c| c.norm())
    }

    pub(crate) fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.frames.dim() != other.frames.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.frames.dim(),
                other.frames.dim()
            )));
        }
        Ok(())
    }
}

/// Number of frames produced for a signal of `len` samples (tail frame zero-padded).
pub fn frame_count(len: usize, frame_size: usize, hop: usize) -> usize {
    if len < frame_size {
        return 0;
    }
    1 + (len - frame_size).div_ceil(hop)
}
