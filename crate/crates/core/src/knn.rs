//! Nearest-neighbour mask estimation over a dictionary of training frames.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{hamming_distance_words, HashCodeMatrix, MaskMatrix};
use crate::dsp::{
    apply_mask, ideal_binary_mask, istft, make_features, stft, AudioClip, ComplexSpectrogram,
    FeatureKind, FeatureMatrix,
};
use crate::error::{Error, Result};
use crate::hashing::{project_bits, ProjectionModel};
use crate::scalar::Real;

/// Mask value used for query frames without energy.
pub const SILENT_FRAME_MASK: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Dot product of unit-norm feature rows.
    Cosine,
    /// Fraction of agreeing hash bits.
    Hamming,
}

impl std::str::FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SearchMode::Cosine),
            "hamming" => Ok(SearchMode::Hamming),
            other => Err(Error::InvalidParameter(format!(
                "unknown search mode `{other}`"
            ))),
        }
    }
}

/// STFT framing and feature choice shared by dictionary building and denoising.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub frame_size: usize,
    pub hop: usize,
    pub kind: FeatureKind,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            frame_size: 1024,
            hop: 256,
            kind: FeatureKind::StftMagnitude,
        }
    }
}

impl AnalysisConfig {
    pub fn n_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    pub fn feature_dim(&self) -> usize {
        self.kind.dim(self.n_bins())
    }
}

/// Training frames: optional features and codes, with one IBM row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary<S> {
    pub features: Option<FeatureMatrix<S>>,
    pub codes: Option<HashCodeMatrix>,
    pub masks: MaskMatrix,
}

impl<S: Real> Dictionary<S> {
    pub fn new(
        features: Option<FeatureMatrix<S>>,
        codes: Option<HashCodeMatrix>,
        masks: MaskMatrix,
    ) -> Result<Self> {
        if features.is_none() && codes.is_none() {
            return Err(Error::InvalidParameter(
                "dictionary needs features or codes".into(),
            ));
        }
        let t = masks.rows();
        if let Some(f) = &features {
            if f.n_rows() != t {
                return Err(Error::ShapeMismatch(format!(
                    "{} feature rows vs {t} mask rows",
                    f.n_rows()
                )));
            }
        }
        if let Some(c) = &codes {
            if c.rows() != t {
                return Err(Error::ShapeMismatch(format!(
                    "{} code rows vs {t} mask rows",
                    c.rows()
                )));
            }
            if c.cols() == 0 {
                return Err(Error::InvalidParameter(
                    "codes must have at least one bit".into(),
                ));
            }
        }
        Ok(Self {
            features,
            codes,
            masks,
        })
    }

    /// Frames of one training mixture with IBMs from its clean components;
    /// silent mixture frames are dropped.
    pub fn from_mixture(
        mixture: &AudioClip<S>,
        speech: &AudioClip<S>,
        noise: &AudioClip<S>,
        analysis: &AnalysisConfig,
    ) -> Result<Self> {
        let mix_spec = stft(mixture, analysis.frame_size, analysis.hop)?;
        let speech_spec = stft(speech, analysis.frame_size, analysis.hop)?;
        let noise_spec = stft(noise, analysis.frame_size, analysis.hop)?;
        let ibm = ideal_binary_mask(&speech_spec, &noise_spec)?;
        let features = make_features(&mix_spec, analysis.kind)?;
        if ibm.rows() != features.n_rows() {
            return Err(Error::ShapeMismatch(
                "mixture and component lengths differ".into(),
            ));
        }
        let keep = features.nonzero_indices();
        Self::new(
            Some(features.select_rows(&keep)),
            None,
            ibm.select_rows(&keep),
        )
    }

    /// Stacks dictionaries with identical members and widths.
    pub fn concat(parts: &[Dictionary<S>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InsufficientInput("no dictionaries to concatenate".into()))?;
        let mut masks = first.masks.clone();
        let mut codes = first.codes.clone();
        for p in &parts[1..] {
            masks.append(&p.masks)?;
            match (&mut codes, &p.codes) {
                (Some(c), Some(pc)) => c.append(pc)?,
                (None, None) => {}
                _ => return Err(Error::ShapeMismatch("some dictionaries lack codes".into())),
            }
        }
        let features = if first.features.is_some() {
            let fs = parts
                .iter()
                .map(|p| {
                    p.features.clone().ok_or_else(|| {
                        Error::ShapeMismatch("some dictionaries lack features".into())
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(FeatureMatrix::concat(&fs)?)
        } else {
            if parts.iter().any(|p| p.features.is_some()) {
                return Err(Error::ShapeMismatch(
                    "some dictionaries lack features".into(),
                ));
            }
            None
        };
        Self::new(features, codes, masks)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.masks.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.masks.rows() == 0
    }

    #[inline]
    pub fn n_bins(&self) -> usize {
        self.masks.cols()
    }

    /// Hashes the stored features with `model`, replacing any existing codes.
    pub fn with_codes(mut self, model: &ProjectionModel<S>) -> Result<Self> {
        let features = self.features.as_ref().ok_or_else(|| {
            Error::InvalidParameter("hashing a dictionary requires its features".into())
        })?;
        self.codes = Some(project_bits(features, model)?);
        Ok(self)
    }

    pub fn without_features(mut self) -> Result<Self> {
        if self.codes.is_none() {
            return Err(Error::InvalidParameter(
                "cannot drop features from a dictionary without codes".into(),
            ));
        }
        self.features = None;
        Ok(self)
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.as_ref().map(|f| f.select_rows(indices)),
            codes: self.codes.as_ref().map(|c| c.select_rows(indices)),
            masks: self.masks.select_rows(indices),
        }
    }
}

/// A query frame, either as unit-norm features or as a packed code.
#[derive(Clone, Copy, Debug)]
pub enum Query<'a, S> {
    Features(ArrayView1<'a, S>),
    Code(&'a [u64]),
}

impl<S> Query<'_, S> {
    pub fn mode(&self) -> SearchMode {
        match self {
            Query::Features(_) => SearchMode::Cosine,
            Query::Code(_) => SearchMode::Hamming,
        }
    }
}

/// The K best dictionary rows, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet<S> {
    pub indices: Vec<usize>,
    pub similarities: Vec<S>,
}

impl<S> NeighborSet<S> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Heap entry ordered so that the *worst* candidate is the maximum.
struct Candidate<K> {
    key: K,
    index: usize,
}

trait SimilarityKey: Copy {
    fn compare(&self, other: &Self) -> Ordering;
}

impl SimilarityKey for u32 {
    fn compare(&self, other: &Self) -> Ordering {
        self.cmp(other)
    }
}

#[derive(Clone, Copy)]
struct FloatKey<S>(S);

impl<S: Real> SimilarityKey for FloatKey<S> {
    fn compare(&self, other: &Self) -> Ordering {
        self.0.total_order(&other.0)
    }
}

impl<K: SimilarityKey> Ord for Candidate<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        // lower similarity is worse; on ties the higher index is worse
        other
            .key
            .compare(&self.key)
            .then(self.index.cmp(&other.index))
    }
}

impl<K: SimilarityKey> PartialOrd for Candidate<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K: SimilarityKey> PartialEq for Candidate<K> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<K: SimilarityKey> Eq for Candidate<K> {}

/// Linear scan keeping the K best keys; the heap top is the current farthest neighbour.
fn scan_top_k<K: SimilarityKey>(n: usize, k: usize, key: impl Fn(usize) -> K) -> Vec<Candidate<K>> {
    let mut heap: BinaryHeap<Candidate<K>> = BinaryHeap::with_capacity(k + 1);
    for index in 0..n {
        let cand = Candidate {
            key: key(index),
            index,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(mut worst) = heap.peek_mut() {
            if cand < *worst {
                *worst = cand;
            }
        }
    }
    heap.into_sorted_vec()
}

/// The `k` most similar dictionary rows to `query`; ties go to the lower index.
pub fn knn_search<S: Real>(
    query: Query<'_, S>,
    dict: &Dictionary<S>,
    k: usize,
) -> Result<NeighborSet<S>> {
    let n = dict.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "K = {k} with {n} dictionary rows"
        )));
    }
    match query {
        Query::Features(q) => {
            let features = dict.features.as_ref().ok_or_else(|| {
                Error::InvalidParameter("cosine search needs dictionary features".into())
            })?;
            if q.len() != features.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "query dimension {} vs dictionary dimension {}",
                    q.len(),
                    features.dim()
                )));
            }
            let q = q
                .as_slice()
                .map(<[S]>::to_vec)
                .unwrap_or_else(|| q.to_vec());
            let rows = &features.rows;
            let top = scan_top_k(n, k, |t| FloatKey(dot(&q, rows.row(t))));
            Ok(NeighborSet {
                indices: top.iter().map(|c| c.index).collect(),
                similarities: top.iter().map(|c| c.key.0).collect(),
            })
        }
        Query::Code(code) => {
            let codes = dict.codes.as_ref().ok_or_else(|| {
                Error::InvalidParameter("hamming search needs dictionary codes".into())
            })?;
            if code.len() != codes.words_per_row() {
                return Err(Error::ShapeMismatch(format!(
                    "query of {} words vs {} words per dictionary code",
                    code.len(),
                    codes.words_per_row()
                )));
            }
            let n_bits = codes.cols();
            let top = scan_top_k(n, k, |t| {
                n_bits as u32 - hamming_distance_words(code, codes.row(t))
            });
            Ok(NeighborSet {
                indices: top.iter().map(|c| c.index).collect(),
                similarities: top
                    .iter()
                    .map(|c| S::lit(c.key as f64 / n_bits as f64))
                    .collect(),
            })
        }
    }
}

#[inline]
fn dot<S: Real>(q: &[S], row: ArrayView1<'_, S>) -> S {
    q.iter()
        .zip(row.iter())
        .fold(S::zero(), |acc, (&a, &b)| acc + a * b)
}

/// Mean of the neighbours' IBM rows.
pub fn estimate_mask<S: Real>(neighbors: &NeighborSet<S>, dict: &Dictionary<S>) -> Result<Vec<S>> {
    if neighbors.is_empty() {
        return Err(Error::InvalidParameter("no neighbours".into()));
    }
    if let Some(&bad) = neighbors.indices.iter().find(|&&i| i >= dict.len()) {
        return Err(Error::OutOfRange(format!(
            "neighbour index {bad} of {}",
            dict.len()
        )));
    }
    let f = dict.n_bins();
    let mut counts = vec![0usize; f];
    for &i in &neighbors.indices {
        for (c, count) in counts.iter_mut().enumerate() {
            *count += usize::from(dict.masks.get(i, c));
        }
    }
    let k = S::of_usize(neighbors.len());
    Ok(counts.into_iter().map(|c| S::of_usize(c) / k).collect())
}

fn check_denoise_inputs<S: Real>(
    dict: &Dictionary<S>,
    model: Option<&ProjectionModel<S>>,
    mode: SearchMode,
    analysis: &AnalysisConfig,
) -> Result<()> {
    if dict.n_bins() != analysis.n_bins() {
        return Err(Error::ShapeMismatch(format!(
            "dictionary masks have {} bins, frame size {} gives {}",
            dict.n_bins(),
            analysis.frame_size,
            analysis.n_bins()
        )));
    }
    match mode {
        SearchMode::Cosine => {
            let f = dict.features.as_ref().ok_or_else(|| {
                Error::InvalidParameter("cosine mode needs dictionary features".into())
            })?;
            if f.kind != analysis.kind || f.dim() != analysis.feature_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "dictionary features are {:?} ({}), analysis uses {:?}",
                    f.kind,
                    f.dim(),
                    analysis.kind
                )));
            }
        }
        SearchMode::Hamming => {
            let model = model.ok_or_else(|| {
                Error::InvalidParameter("hamming mode needs a projection model".into())
            })?;
            let codes = dict.codes.as_ref().ok_or_else(|| {
                Error::InvalidParameter("hamming mode needs dictionary codes".into())
            })?;
            if model.kind != analysis.kind || model.dim() != analysis.feature_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "model expects {:?} ({}), analysis uses {:?}",
                    model.kind,
                    model.dim(),
                    analysis.kind
                )));
            }
            if codes.cols() != model.n_bits() {
                return Err(Error::ShapeMismatch(format!(
                    "dictionary codes have {} bits, model has {}",
                    codes.cols(),
                    model.n_bits()
                )));
            }
        }
    }
    Ok(())
}

/// Soft mask for every frame of a mixture spectrogram.
pub fn estimate_mask_matrix<S: Real>(
    spec: &ComplexSpectrogram<S>,
    dict: &Dictionary<S>,
    model: Option<&ProjectionModel<S>>,
    k: usize,
    mode: SearchMode,
    analysis: &AnalysisConfig,
) -> Result<Array2<S>> {
    check_denoise_inputs(dict, model, mode, analysis)?;
    if k == 0 || k > dict.len() {
        return Err(Error::InvalidParameter(format!(
            "K = {k} with {} dictionary rows",
            dict.len()
        )));
    }
    let features = make_features(spec, analysis.kind)?;
    let rows: Vec<Vec<S>> = (0..features.n_rows())
        .into_par_iter()
        .map(|t| {
            if features.zero_rows[t] {
                return Ok(vec![S::lit(SILENT_FRAME_MASK); dict.n_bins()]);
            }
            let neighbors = match mode {
                SearchMode::Cosine => knn_search(Query::Features(features.row(t)), dict, k)?,
                SearchMode::Hamming => {
                    let code = model.expect("checked above").hash_row(features.row(t));
                    knn_search(Query::Code(&code), dict, k)?
                }
            };
            estimate_mask(&neighbors, dict)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<S> = rows.concat();
    Array2::from_shape_vec((features.n_rows(), dict.n_bins()), flat)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// STFT, per-frame neighbour search, mask averaging, masking and resynthesis.
pub fn denoise<S: Real>(
    clip: &AudioClip<S>,
    dict: &Dictionary<S>,
    model: Option<&ProjectionModel<S>>,
    k: usize,
    mode: SearchMode,
    analysis: &AnalysisConfig,
) -> Result<AudioClip<S>> {
    check_denoise_inputs(dict, model, mode, analysis)?;
    let spec = stft(clip, analysis.frame_size, analysis.hop)?;
    let mask = estimate_mask_matrix(&spec, dict, model, k, mode, analysis)?;
    istft(&apply_mask(&spec, &mask)?)
}

/// Uniform random subset of `floor(fraction · T)` rows, kept in dictionary order.
pub fn subsample_dictionary<S: Real>(
    dict: &Dictionary<S>,
    fraction: f64,
    seed: u64,
) -> Result<Dictionary<S>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    let n = dict.len();
    let count = ((fraction * n as f64) + 1e-9).floor() as usize;
    if count == 0 {
        return Err(Error::InsufficientInput(format!(
            "fraction {fraction} of {n} rows leaves an empty dictionary"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, n, count).into_vec();
    indices.sort_unstable();
    Ok(dict.select_rows(&indices))
}
