//! Sign-of-affine projections into bit-packed hash codes and Hamming similarity.

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bits::{hamming_distance_words, words_for, HashCodeMatrix, WORD_BITS};
use crate::boost::DistanceKind;
use crate::dsp::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `L` projections with biases and boosting weights.
///
/// Bit `l` of a feature row `h` is `[h · projections[l] + biases[l] >= 0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionModel<S> {
    /// L×D projection matrix, one projection per row.
    pub projections: Array2<S>,
    pub biases: Vec<S>,
    pub betas: Vec<S>,
    /// Weighted SSM error of each learner when it was fitted.
    pub errors: Vec<S>,
    pub kind: FeatureKind,
    pub tanh_slope: S,
    pub distance: DistanceKind,
}

impl<S: Real> ProjectionModel<S> {
    #[inline]
    pub fn n_bits(&self) -> usize {
        self.projections.nrows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.projections.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.n_bits();
        if l == 0 {
            return Err(Error::InvalidParameter("model has no projections".into()));
        }
        if self.dim() == 0 {
            return Err(Error::InvalidParameter(
                "model has zero feature dimension".into(),
            ));
        }
        for (name, len) in [
            ("biases", self.biases.len()),
            ("betas", self.betas.len()),
            ("errors", self.errors.len()),
        ] {
            if len != l {
                return Err(Error::ShapeMismatch(format!(
                    "{len} {name} for {l} projections"
                )));
            }
        }
        let finite = self
            .projections
            .iter()
            .chain(&self.biases)
            .chain(&self.betas)
            .chain(&self.errors)
            .all(|v| v.is_finite());
        if !finite || !self.tanh_slope.is_finite() {
            return Err(Error::NonFinite("projection model parameters".into()));
        }
        if let FeatureKind::Mel(bands) = self.kind {
            if bands != self.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "{bands} mel bands vs dimension {}",
                    self.dim()
                )));
            }
        }
        Ok(())
    }

    /// The model made of the first `n_bits` learners.
    pub fn truncated(&self, n_bits: usize) -> Result<Self> {
        if n_bits == 0 || n_bits > self.n_bits() {
            return Err(Error::InvalidParameter(format!(
                "cannot keep {n_bits} of {} projections",
                self.n_bits()
            )));
        }
        Ok(Self {
            projections: self.projections.slice(ndarray::s![..n_bits, ..]).to_owned(),
            biases: self.biases[..n_bits].to_vec(),
            betas: self.betas[..n_bits].to_vec(),
            errors: self.errors[..n_bits].to_vec(),
            kind: self.kind,
            tanh_slope: self.tanh_slope,
            distance: self.distance,
        })
    }

    /// Affine response of projection `l` to a feature row.
    #[inline]
    pub fn response(&self, l: usize, row: ArrayView1<'_, S>) -> S {
        let p = self.projections.row(l);
        row.iter()
            .zip(p.iter())
            .fold(S::zero(), |acc, (&h, &w)| acc + h * w)
            + self.biases[l]
    }

    /// Packed code of one feature row.
    pub fn hash_row(&self, row: ArrayView1<'_, S>) -> Vec<u64> {
        let mut words = vec![0u64; words_for(self.n_bits())];
        for l in 0..self.n_bits() {
            if self.response(l, row) >= S::zero() {
                words[l / WORD_BITS] |= 1 << (l % WORD_BITS);
            }
        }
        words
    }

    fn check_features(&self, features: &FeatureMatrix<S>) -> Result<()> {
        if features.dim() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "features have dimension {}, model expects {}",
                features.dim(),
                self.dim()
            )));
        }
        if features.kind != self.kind {
            return Err(Error::ShapeMismatch(format!(
                "features are {:?}, model was built for {:?}",
                features.kind, self.kind
            )));
        }
        Ok(())
    }
}

/// Hashes every feature row: bit (t, l) is set iff `H_t · P_l + b_l >= 0`.
pub fn project_bits<S: Real>(
    features: &FeatureMatrix<S>,
    model: &ProjectionModel<S>,
) -> Result<HashCodeMatrix> {
    model.check_features(features)?;
    let rows: Vec<Vec<u64>> = (0..features.n_rows())
        .into_par_iter()
        .map(|t| model.hash_row(features.row(t)))
        .collect();
    HashCodeMatrix::from_words(features.n_rows(), model.n_bits(), rows.concat())
}

/// Random-hyperplane baseline: i.i.d. standard normal projections, zero biases, unit betas.
pub fn random_projection_model<S: Real>(
    n_bits: usize,
    kind: FeatureKind,
    dim: usize,
    seed: u64,
) -> Result<ProjectionModel<S>> {
    if n_bits == 0 || dim == 0 {
        return Err(Error::InvalidParameter(format!(
            "need at least one projection and one dimension, got {n_bits}x{dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projections = Array2::from_shape_simple_fn((n_bits, dim), || {
        let v: f64 = StandardNormal.sample(&mut rng);
        S::lit(v)
    });
    let model = ProjectionModel {
        projections,
        biases: vec![S::zero(); n_bits],
        betas: vec![S::one(); n_bits],
        errors: vec![S::lit(0.5); n_bits],
        kind,
        tanh_slope: S::lit(crate::boost::DEFAULT_TANH_SLOPE),
        distance: DistanceKind::AbsDiff,
    };
    model.validate()?;
    Ok(model)
}

/// Fraction of matching bits between two packed codes of `n_bits` bits.
pub fn hamming_similarity(a: &[u64], b: &[u64], n_bits: usize) -> Result<f64> {
    let words = words_for(n_bits);
    if n_bits == 0 || a.len() != words || b.len() != words {
        return Err(Error::ShapeMismatch(format!(
            "codes of {} and {} words for {n_bits} bits",
            a.len(),
            b.len()
        )));
    }
    let differing = hamming_distance_words(a, b) as usize;
    Ok((n_bits - differing) as f64 / n_bits as f64)
}
