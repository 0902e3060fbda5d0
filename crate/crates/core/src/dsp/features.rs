use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which per-frame feature vectors populate a [`FeatureMatrix`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "bands")]
pub enum FeatureKind {
    /// Magnitude of every STFT bin (D = F).
    StftMagnitude,
    /// Magnitude projected through a triangular mel filterbank (D = bands).
    Mel(usize),
}

impl FeatureKind {
    /// Stable on-disk tag.
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::StftMagnitude => 0,
            FeatureKind::Mel(_) => 1,
        }
    }

    /// Inverse of [`FeatureKind::code`]; mel band count equals the feature dimension.
    pub fn from_code(code: u8, dim: usize) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::StftMagnitude),
            1 => Some(FeatureKind::Mel(dim)),
            _ => None,
        }
    }

    /// Feature dimension for spectra with `n_bins` bins.
    pub fn dim(self, n_bins: usize) -> usize {
        match self {
            FeatureKind::StftMagnitude => n_bins,
            FeatureKind::Mel(bands) => bands,
        }
    }
}

/// T×D matrix of L2-normalised, non-negative feature rows.
///
/// Rows whose energy was zero before normalisation stay all-zero and are
/// flagged in `zero_rows`; they never enter a training dictionary.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<S> {
    pub rows: Array2<S>,
    pub kind: FeatureKind,
    pub zero_rows: Vec<bool>,
}

impl<S: Real> FeatureMatrix<S> {
    /// Normalises each row of `raw` to unit L2 norm.
    pub fn from_raw(mut raw: Array2<S>, kind: FeatureKind) -> Result<Self> {
        if let Some(v) = raw.iter().find(|v| !v.is_finite() || **v < S::zero()) {
            return Err(Error::OutOfRange(format!(
                "feature entries must be finite and non-negative, found {v}"
            )));
        }
        let mut zero_rows = Vec::with_capacity(raw.nrows());
        for mut row in raw.rows_mut() {
            let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt();
            if norm > S::min_positive_value() {
                row.mapv_inplace(|v| v / norm);
                zero_rows.push(false);
            } else {
                row.fill(S::zero());
                zero_rows.push(true);
            }
        }
        Ok(Self {
            rows: raw,
            kind,
            zero_rows,
        })
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    #[inline]
    pub fn row(&self, t: usize) -> ArrayView1<'_, S> {
        self.rows.row(t)
    }

    /// Indices of rows that carry energy.
    pub fn nonzero_indices(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&t| !self.zero_rows[t]).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            rows: self.rows.select(Axis(0), indices),
            kind: self.kind,
            zero_rows: indices.iter().map(|&i| self.zero_rows[i]).collect(),
        }
    }

    /// Stacks matrices of the same kind and dimension.
    pub fn concat(parts: &[FeatureMatrix<S>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InsufficientInput("no feature matrices to concatenate".into()))?;
        if parts
            .iter()
            .any(|p| p.kind != first.kind || p.dim() != first.dim())
        {
            return Err(Error::ShapeMismatch(
                "feature kinds or dimensions differ".into(),
            ));
        }
        let views: Vec<_> = parts.iter().map(|p| p.rows.view()).collect();
        let rows = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(Self {
            rows,
            kind: first.kind,
            zero_rows: parts
                .iter()
                .flat_map(|p| p.zero_rows.iter().copied())
                .collect(),
        })
    }

    /// Largest deviation of a non-flagged row norm from one.
    pub fn max_norm_deviation(&self) -> f64 {
        self.rows
            .rows()
            .into_iter()
            .zip(&self.zero_rows)
            .filter(|(_, &z)| !z)
            .map(|(r, _)| (r.iter().map(|&v| v * v).sum::<S>().sqrt().to_f64_lossy() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Triangular filters on the HTK mel scale, each normalised to unit area in Hz.
#[derive(Clone, Debug)]
pub struct MelFilterbank<S> {
    n_bins: usize,
    /// Per band: first bin index and the weights of consecutive bins.
    bands: Vec<(usize, Vec<S>)>,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Builds `n_bands` filters covering 0..Nyquist for spectra of `n_bins` bins.
pub fn mel_filterbank<S: Real>(
    n_bands: usize,
    n_bins: usize,
    sample_rate: u32,
) -> Result<MelFilterbank<S>> {
    if n_bands == 0 || n_bands >= n_bins {
        return Err(Error::InvalidParameter(format!(
            "mel band count must be in 1..{n_bins}, got {n_bands}"
        )));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let bin_hz = nyquist / (n_bins - 1) as f64;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_bands + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_bands + 1) as f64))
        .collect();

    let bands = edges
        .windows(3)
        .map(|e| {
            let (lo, mid, hi) = (e[0], e[1], e[2]);
            let area = 2.0 / (hi - lo);
            let first = (lo / bin_hz).ceil() as usize;
            let last = ((hi / bin_hz).floor() as usize).min(n_bins - 1);
            let weights = (first..=last)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    };
                    S::lit(w.max(0.0) * area)
                })
                .collect();
            (first, weights)
        })
        .collect();
    Ok(MelFilterbank { n_bins, bands })
}

impl<S: Real> MelFilterbank<S> {
    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    /// Dense bands × bins weight matrix.
    pub fn to_dense(&self) -> Array2<S> {
        let mut w = Array2::zeros((self.bands.len(), self.n_bins));
        for (b, (first, weights)) in self.bands.iter().enumerate() {
            for (i, &v) in weights.iter().enumerate() {
                w[[b, first + i]] = v;
            }
        }
        w
    }

    /// Applies the filterbank to every row of a magnitude matrix.
    pub fn apply(&self, mags: &Array2<S>) -> Array2<S> {
        let mut out = Array2::zeros((mags.nrows(), self.bands.len()));
        for (mut dst, src) in out.rows_mut().into_iter().zip(mags.rows()) {
            for (b, (first, weights)) in self.bands.iter().enumerate() {
                dst[b] = weights
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| w * src[first + i])
                    .sum();
            }
        }
        out
    }
}

/// Magnitude or mel features of every frame, each row L2-normalised.
pub fn make_features<S: Real>(
    spec: &ComplexSpectrogram<S>,
    kind: FeatureKind,
) -> Result<FeatureMatrix<S>> {
    let mags = spec.magnitudes();
    let raw = match kind {
        FeatureKind::StftMagnitude => mags,
        FeatureKind::Mel(bands) => {
            mel_filterbank::<S>(bands, spec.n_bins(), spec.sample_rate)?.apply(&mags)
        }
    };
    FeatureMatrix::from_raw(raw, kind)
}
