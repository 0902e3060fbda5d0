//! Per-query timing of the cosine and Hamming dictionary scans.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{words_for, BitMatrix, HashCodeMatrix};
use crate::dsp::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::knn::{knn_search, Dictionary, Query, SearchMode};
use crate::scalar::Real;

/// Unit-norm rows with i.i.d. uniform non-negative entries.
pub fn random_unit_features<S: Real>(
    rows: usize,
    dim: usize,
    seed: u64,
) -> Result<FeatureMatrix<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Array2::from_shape_simple_fn((rows, dim), || S::lit(rng.random_range(0.0..1.0)));
    FeatureMatrix::from_raw(raw, FeatureKind::StftMagnitude)
}

/// Uniformly random codes with zero padding.
pub fn random_codes(rows: usize, n_bits: usize, seed: u64) -> HashCodeMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits: Vec<bool> = (0..rows * n_bits).map(|_| rng.random_bool(0.5)).collect();
    BitMatrix::pack(rows, n_bits, &bits).expect("sizes agree")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: SearchMode,
    pub rows: usize,
    /// Code bits (Hamming) or feature dimension (cosine).
    pub width: usize,
    pub words_per_row: usize,
    pub per_query_us: f64,
}

/// Fastest of `repeats` passes over all queries, in seconds per query.
fn time_queries<S: Real>(
    dict: &Dictionary<S>,
    queries: &[Query<'_, S>],
    k: usize,
    repeats: usize,
) -> Result<f64> {
    if queries.is_empty() || repeats == 0 {
        return Err(Error::InvalidParameter(
            "need at least one query and one repeat".into(),
        ));
    }
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let start = Instant::now();
        let mut sink = 0usize;
        for q in queries {
            sink = sink.wrapping_add(knn_search(*q, dict, k)?.indices[0]);
        }
        std::hint::black_box(sink);
        best = best.min(start.elapsed().as_secs_f64() / queries.len() as f64);
    }
    Ok(best)
}

/// Times a Hamming scan over the first `rows` codes of `codes`.
pub fn time_hamming_scan(
    codes: &HashCodeMatrix,
    rows: usize,
    n_queries: usize,
    k: usize,
    repeats: usize,
) -> Result<BenchRow> {
    let prefix: Vec<usize> = (0..rows.min(codes.rows())).collect();
    let dict = Dictionary::<f32>::new(
        None,
        Some(codes.select_rows(&prefix)),
        BitMatrix::zeros(prefix.len(), 1),
    )?;
    let query_codes = random_codes(n_queries, codes.cols(), 0x5EED);
    let queries: Vec<Query<'_, f32>> = (0..n_queries)
        .map(|i| Query::Code(query_codes.row(i)))
        .collect();
    let secs = time_queries(&dict, &queries, k, repeats)?;
    Ok(BenchRow {
        mode: SearchMode::Hamming,
        rows: prefix.len(),
        width: codes.cols(),
        words_per_row: words_for(codes.cols()),
        per_query_us: secs * 1e6,
    })
}

/// Times a cosine scan over the first `rows` feature rows.
pub fn time_cosine_scan<S: Real>(
    features: &FeatureMatrix<S>,
    rows: usize,
    n_queries: usize,
    k: usize,
    repeats: usize,
) -> Result<BenchRow> {
    let prefix: Vec<usize> = (0..rows.min(features.n_rows())).collect();
    let dim = features.dim();
    let dict = Dictionary::new(
        Some(features.select_rows(&prefix)),
        None,
        BitMatrix::zeros(prefix.len(), 1),
    )?;
    let query_rows = random_unit_features::<S>(n_queries, dim, 0x5EED)?;
    let queries: Vec<Query<'_, S>> = (0..n_queries)
        .map(|i| Query::Features(query_rows.row(i)))
        .collect();
    let secs = time_queries(&dict, &queries, k, repeats)?;
    Ok(BenchRow {
        mode: SearchMode::Cosine,
        rows: prefix.len(),
        width: dim,
        words_per_row: 0,
        per_query_us: secs * 1e6,
    })
}

/// Grid of scan timings: cosine over `f32` features of dimension `dim`,
/// Hamming for every code length, at every dictionary size.
pub fn bench_grid(
    sizes: &[usize],
    code_lengths: &[usize],
    dim: usize,
    modes: &[SearchMode],
    n_queries: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let max_rows = sizes.iter().copied().max().unwrap_or(0);
    if max_rows == 0 || k == 0 || k > sizes.iter().copied().min().unwrap_or(0) {
        return Err(Error::InvalidParameter(
            "dictionary sizes must be at least K".into(),
        ));
    }
    let mut out = Vec::new();
    if modes.contains(&SearchMode::Cosine) {
        let features = random_unit_features::<f32>(max_rows, dim, seed)?;
        for &t in sizes {
            out.push(time_cosine_scan(&features, t, n_queries, k, 3)?);
        }
    }
    if modes.contains(&SearchMode::Hamming) {
        for &l in code_lengths {
            let codes = random_codes(max_rows, l, seed ^ l as u64);
            for &t in sizes {
                out.push(time_hamming_scan(&codes, t, n_queries, k, 3)?);
            }
        }
    }
    Ok(out)
}

/// Tab-separated rendering of a timing grid.
pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = String::from("mode\trows\twidth\twords_per_row\tper_query_us\n");
    for r in rows {
        let mode = match r.mode {
            SearchMode::Cosine => "cosine",
            SearchMode::Hamming => "hamming",
        };
        s.push_str(&format!(
            "{mode}\t{}\t{}\t{}\t{:.3}\n",
            r.rows, r.width, r.words_per_row, r.per_query_us
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_per_row_follow_code_length() {
        let rows = bench_grid(&[50], &[64, 128, 150], 16, &[SearchMode::Hamming], 2, 5, 1).unwrap();
        let words: Vec<usize> = rows.iter().map(|r| r.words_per_row).collect();
        assert_eq!(words, vec![1, 2, 3]);
        assert!(rows.iter().all(|r| r.per_query_us > 0.0));
    }

    #[test]
    fn grid_shape_and_table() {
        let rows = bench_grid(
            &[20, 40],
            &[32],
            8,
            &[SearchMode::Cosine, SearchMode::Hamming],
            3,
            2,
            1,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(bench_table(&rows).lines().count(), 5);
        assert!(bench_grid(&[3], &[32], 8, &[SearchMode::Cosine], 1, 5, 1).is_err());
    }
}
