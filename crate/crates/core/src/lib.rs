//! Boosted locality sensitive hashing for nearest-neighbour speech denoising.
//!
//! A dictionary of clean-speech spectral frames (with their ideal binary
//! masks) is searched for each frame of a noisy mixture; the neighbours'
//! masks are averaged into a soft mask. Search runs either on cosine
//! similarity of unit-normalised features or on Hamming similarity of
//! packed binary codes, where the projections producing those codes are
//! learned by boosting so that code agreement tracks the cosine
//! self-similarity of the training frames.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the
//! `*32`/`*64` aliases below pin the scalar.

pub mod bench;
pub mod bits;
pub mod boost;
pub mod dsp;
mod error;
pub mod hashing;
pub mod knn;
pub mod metrics;
mod scalar;
pub mod store;
pub mod synth;

pub use bits::{hamming_distance_words, BitMatrix, HashCodeMatrix, MaskMatrix};
pub use boost::{
    train_blsh, train_blsh_with, DistanceKind, LearnerDiagnostics, PairWeightMatrix, TrainConfig,
    TrainOutcome,
};
pub use dsp::{
    istft, make_features, stft, AudioClip, ComplexSpectrogram, FeatureKind, FeatureMatrix, Mixture,
};
pub use error::{Error, Result, StoreError};
pub use hashing::{hamming_similarity, project_bits, random_projection_model, ProjectionModel};
pub use knn::{denoise, knn_search, AnalysisConfig, Dictionary, NeighborSet, Query, SearchMode};
pub use metrics::{corpus_report, CorpusReport, FileScores, SeparationScores};
pub use scalar::Real;

pub type AudioClip32 = AudioClip<f32>;
pub type AudioClip64 = AudioClip<f64>;
pub type FeatureMatrix32 = FeatureMatrix<f32>;
pub type FeatureMatrix64 = FeatureMatrix<f64>;
pub type ProjectionModel32 = ProjectionModel<f32>;
pub type ProjectionModel64 = ProjectionModel<f64>;
pub type Dictionary32 = Dictionary<f32>;
pub type Dictionary64 = Dictionary<f64>;
