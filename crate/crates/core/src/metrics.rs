//! Energy-ratio separation metrics for single-target denoising.
//!
//! The estimate is decomposed by orthogonal projection onto the target and
//! onto the span of target and interferer (no distortion filters):
//!
//! ```text
//! s_target = P_s(est)
//! e_interf = P_{s,n}(est) - s_target
//! e_artif  = est - P_{s,n}(est)
//! ```
//!
//! Infinite ratios are reported as ±[`DB_CAP`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Magnitude cap for ratios whose numerator or denominator vanishes.
pub const DB_CAP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationScores {
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
    pub si_sdr_db: f64,
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return if num > 0.0 { DB_CAP } else { 0.0 };
    }
    if num <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

fn to_f64<S: Real>(x: &[S]) -> Vec<f64> {
    x.iter().map(|v| v.to_f64_lossy()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Scale-invariant SDR of `estimate` against `target`.
pub fn si_sdr<S: Real>(estimate: &[S], target: &[S]) -> Result<f64> {
    if estimate.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} samples, target {}",
            estimate.len(),
            target.len()
        )));
    }
    let est = to_f64(estimate);
    let s = to_f64(target);
    let ss = energy(&s);
    if ss <= 0.0 {
        return Err(Error::Degenerate("target has zero energy".into()));
    }
    if energy(&est) <= 0.0 {
        return Err(Error::Degenerate("estimate has zero energy".into()));
    }
    let alpha = dot(&est, &s) / ss;
    let scaled: Vec<f64> = s.iter().map(|v| alpha * v).collect();
    let err: Vec<f64> = est.iter().zip(&scaled).map(|(e, t)| e - t).collect();
    Ok(ratio_db(energy(&scaled), energy(&err)))
}

/// SDR, SIR, SAR and SI-SDR of an estimate of `target` corrupted by `interferer`.
pub fn score<S: Real>(estimate: &[S], target: &[S], interferer: &[S]) -> Result<SeparationScores> {
    let n = target.len();
    if estimate.len() != n || interferer.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "lengths differ: estimate {}, target {n}, interferer {}",
            estimate.len(),
            interferer.len()
        )));
    }
    let est = to_f64(estimate);
    let s = to_f64(target);
    let v = to_f64(interferer);
    let (ss, vv, sv) = (energy(&s), energy(&v), dot(&s, &v));
    if ss <= 0.0 || vv <= 0.0 {
        return Err(Error::Degenerate(
            "target or interferer has zero energy".into(),
        ));
    }
    if energy(&est) <= 0.0 {
        return Err(Error::Degenerate("estimate has zero energy".into()));
    }
    let det = ss * vv - sv * sv;
    if det <= 1e-12 * ss * vv {
        return Err(Error::Degenerate(
            "target and interferer are collinear".into(),
        ));
    }
    let (es, ev) = (dot(&est, &s), dot(&est, &v));
    // Gram solve for the projection onto span{s, v}
    let a = (vv * es - sv * ev) / det;
    let b = (ss * ev - sv * es) / det;
    let alpha = es / ss;

    let mut s_target = vec![0.0; n];
    let mut e_interf = vec![0.0; n];
    let mut e_artif = vec![0.0; n];
    for i in 0..n {
        s_target[i] = alpha * s[i];
        let proj = a * s[i] + b * v[i];
        e_interf[i] = proj - s_target[i];
        e_artif[i] = est[i] - proj;
    }
    let distortion: Vec<f64> = e_interf.iter().zip(&e_artif).map(|(i, a)| i + a).collect();
    let signal_plus_interf: Vec<f64> = s_target.iter().zip(&e_interf).map(|(s, i)| s + i).collect();
    let target_energy = energy(&s_target);

    Ok(SeparationScores {
        sdr_db: ratio_db(target_energy, energy(&distortion)),
        sir_db: ratio_db(target_energy, energy(&e_interf)),
        sar_db: ratio_db(energy(&signal_plus_interf), energy(&e_artif)),
        si_sdr_db: si_sdr(estimate, target)?,
    })
}

/// Scores of one file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileScores {
    pub name: String,
    pub scores: SeparationScores,
}

/// Per-file rows with per-metric mean and sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub rows: Vec<FileScores>,
    pub mean: SeparationScores,
    pub std: SeparationScores,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn corpus_report(rows: Vec<FileScores>) -> Result<CorpusReport> {
    if rows.is_empty() {
        return Err(Error::InsufficientInput("no scored files".into()));
    }
    let column = |f: fn(&SeparationScores) -> f64| {
        mean_std(&rows.iter().map(|r| f(&r.scores)).collect::<Vec<_>>())
    };
    let (sdr_m, sdr_s) = column(|s| s.sdr_db);
    let (sir_m, sir_s) = column(|s| s.sir_db);
    let (sar_m, sar_s) = column(|s| s.sar_db);
    let (si_m, si_s) = column(|s| s.si_sdr_db);
    Ok(CorpusReport {
        mean: SeparationScores {
            sdr_db: sdr_m,
            sir_db: sir_m,
            sar_db: sar_m,
            si_sdr_db: si_m,
        },
        std: SeparationScores {
            sdr_db: sdr_s,
            sir_db: sir_s,
            sar_db: sar_s,
            si_sdr_db: si_s,
        },
        rows,
    })
}

impl CorpusReport {
    /// Tab-separated table: one row per file, then `mean` and `std` rows.
    pub fn to_table(&self) -> String {
        let mut out = String::from("file\tsdr_db\tsir_db\tsar_db\tsi_sdr_db\n");
        let mut line = |name: &str, s: &SeparationScores| {
            let _ = writeln!(
                out,
                "{name}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
                s.sdr_db, s.sir_db, s.sar_db, s.si_sdr_db
            );
        };
        for r in &self.rows {
            line(&r.name, &r.scores);
        }
        line("mean", &self.mean);
        line("std", &self.std);
        out
    }
}
