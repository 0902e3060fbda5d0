//! Boosted training of hash projections.
//!
//! Each weak learner is one projection and bias whose sign gives one bit per
//! frame. A learner is judged by how well the agreement matrix of its bit
//! (1 where two frames share the bit, 0 otherwise) matches the Gram matrix
//! of the unit-norm features, weighted by a distribution over frame pairs.
//! After each learner the pair weights grow exponentially with that
//! learner's discrepancy so the next one concentrates on the pairs the code
//! gets wrong.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use crate::hashing::ProjectionModel;
use crate::scalar::Real;

pub const DEFAULT_TANH_SLOPE: f64 = 10.0;

/// Probabilities are kept inside [δ, 1 − δ] before taking logarithms.
const CE_EPS: f64 = 1e-7;
/// ε is clamped to [EPS_CLAMP, 1 − EPS_CLAMP] before computing β.
const EPS_CLAMP: f64 = 1e-10;
/// Fresh initialisations tried when a learner is worse than chance.
const MAX_REFITS: usize = 3;

/// Element-wise distance between a code agreement value and a target similarity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    /// `|c − t|`, bounded in [0, 1].
    #[default]
    AbsDiff,
    /// `−t ln c − (1 − t) ln(1 − c)` with `c` squeezed into [δ, 1 − δ].
    CrossEntropy,
}

impl DistanceKind {
    #[inline]
    pub fn eval<S: Real>(self, code: S, target: S) -> S {
        match self {
            DistanceKind::AbsDiff => (code - target).abs(),
            DistanceKind::CrossEntropy => {
                let c = squeeze(code);
                -(target * c.ln() + (S::one() - target) * (S::one() - c).ln())
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            DistanceKind::AbsDiff => 0,
            DistanceKind::CrossEntropy => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DistanceKind::AbsDiff),
            1 => Some(DistanceKind::CrossEntropy),
            _ => None,
        }
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs_diff" => Ok(DistanceKind::AbsDiff),
            "cross_entropy" => Ok(DistanceKind::CrossEntropy),
            other => Err(Error::InvalidParameter(format!(
                "unknown distance kind `{other}`"
            ))),
        }
    }
}

#[inline]
fn squeeze<S: Real>(c: S) -> S {
    let d = S::lit(CE_EPS);
    d + (S::one() - d - d) * c
}

/// Non-negative weights over the T×T frame pairs of one minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct PairWeightMatrix<S> {
    weights: Array2<S>,
    normalized: bool,
}

impl<S: Real> PairWeightMatrix<S> {
    /// Every pair weighted `1 / T²`.
    pub fn uniform(n: usize) -> Self {
        let w = S::one() / S::of_usize(n * n);
        Self {
            weights: Array2::from_elem((n, n), w),
            normalized: true,
        }
    }

    /// Wraps raw weights; call [`PairWeightMatrix::normalize`] before use.
    pub fn from_weights(weights: Array2<S>) -> Result<Self> {
        if !weights.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "pair weights {:?} not square",
                weights.dim()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < S::zero()) {
            return Err(Error::OutOfRange(
                "pair weights must be finite and non-negative".into(),
            ));
        }
        let mut m = Self {
            weights,
            normalized: false,
        };
        m.normalized = m.sum_is_one();
        Ok(m)
    }

    pub fn normalize(mut self) -> Result<Self> {
        let sum = self.sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Degenerate(format!("pair weights sum to {sum}")));
        }
        let inv = S::lit(1.0 / sum);
        self.weights.mapv_inplace(|w| w * inv);
        self.normalized = true;
        Ok(self)
    }

    #[inline]
    pub fn weights(&self) -> &Array2<S> {
        &self.weights
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Total weight, accumulated row by row in `f64`.
    pub fn sum(&self) -> f64 {
        row_sums(self.weights.view(), |w, _, _| w.to_f64_lossy())
    }

    fn sum_is_one(&self) -> bool {
        (self.sum() - 1.0).abs() <= S::sum_tolerance()
    }

    fn require_normalized(&self) -> Result<()> {
        if !self.normalized || !self.sum_is_one() {
            return Err(Error::InvalidParameter(format!(
                "pair weights must be normalized (sum {})",
                self.sum()
            )));
        }
        Ok(())
    }
}

/// Sums `f(value, row, col)` over a matrix in parallel rows, then adds the
/// per-row totals in row order so the result does not depend on scheduling.
fn row_sums<S: Real>(m: ArrayView2<'_, S>, f: impl Fn(S, usize, usize) -> f64 + Sync) -> f64 {
    let partial: Vec<f64> = (0..m.nrows())
        .into_par_iter()
        .map(|i| m.row(i).iter().enumerate().map(|(j, &v)| f(v, i, j)).sum())
        .collect();
    partial.iter().sum()
}

/// Gram matrix `H Hᵀ` of unit-norm, non-negative feature rows, clamped to [0, 1].
pub fn target_ssm<S: Real>(features: &FeatureMatrix<S>) -> Result<Array2<S>> {
    let dev = features.max_norm_deviation();
    if features.zero_rows.iter().any(|&z| z) || dev > 1e-5 {
        return Err(Error::InvalidParameter(format!(
            "target SSM needs unit-norm rows (max deviation {dev:e}, zero rows present: {})",
            features.zero_rows.iter().any(|&z| z)
        )));
    }
    let h = &features.rows;
    let mut g = h.dot(&h.t());
    g.mapv_inplace(|v| v.max(S::zero()).min(S::one()));
    Ok(g)
}

/// Agreement matrix of one bipolar code: `(c_i c_j + 1) / 2`.
pub fn code_ssm<S: Real>(code: &[i8]) -> Result<Array2<S>> {
    if let Some(v) = code.iter().find(|&&c| c != 1 && c != -1) {
        return Err(Error::OutOfRange(format!("code entry {v} is not bipolar")));
    }
    Ok(agreement_matrix(
        code.iter().map(|&c| c > 0).collect::<Vec<_>>().as_slice(),
    ))
}

fn agreement_matrix<S: Real>(bits: &[bool]) -> Array2<S> {
    let n = bits.len();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if bits[i] == bits[j] {
            S::one()
        } else {
            S::zero()
        }
    })
}

fn check_pair_shapes<S: Real>(
    code: &Array2<S>,
    target: &Array2<S>,
    weights: &PairWeightMatrix<S>,
) -> Result<()> {
    if code.dim() != target.dim() || target.dim() != weights.weights.dim() {
        return Err(Error::ShapeMismatch(format!(
            "code {:?}, target {:?}, weights {:?}",
            code.dim(),
            target.dim(),
            weights.weights.dim()
        )));
    }
    Ok(())
}

/// ε = Σ D(code, target) · W over all pairs.
pub fn weighted_ssm_error<S: Real>(
    code: &Array2<S>,
    target: &Array2<S>,
    weights: &PairWeightMatrix<S>,
    kind: DistanceKind,
) -> Result<S> {
    check_pair_shapes(code, target, weights)?;
    weights.require_normalized()?;
    let eps = row_sums(weights.weights.view(), |w, i, j| {
        (kind.eval(code[[i, j]], target[[i, j]]) * w).to_f64_lossy()
    });
    Ok(S::lit(eps))
}

/// Confidence of a learner with weighted error ε: `½ ln((1 − ε) / ε)`.
pub fn beta_from_error<S: Real>(eps: S) -> S {
    let e = eps.to_f64_lossy().clamp(EPS_CLAMP, 1.0 - EPS_CLAMP);
    S::lit(0.5 * ((1.0 - e) / e).ln())
}

/// `W ⊙ exp(β · D(code, target))`, renormalised to sum to one.
pub fn update_pair_weights<S: Real>(
    weights: &PairWeightMatrix<S>,
    beta: S,
    code: &Array2<S>,
    target: &Array2<S>,
    kind: DistanceKind,
) -> Result<PairWeightMatrix<S>> {
    check_pair_shapes(code, target, weights)?;
    weights.require_normalized()?;
    if !beta.is_finite() {
        return Err(Error::NonFinite(format!("beta {beta}")));
    }
    let mut exponent = Array2::<f64>::zeros(code.dim());
    Zip::from(&mut exponent)
        .and(code)
        .and(target)
        .for_each(|e, &c, &t| *e = beta.to_f64_lossy() * kind.eval(c, t).to_f64_lossy());
    // Shifting by the largest exponent cancels in the renormalisation.
    let shift = exponent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::NonFinite("weight update exponent".into()));
    }
    let mut updated = Array2::<f64>::zeros(code.dim());
    Zip::from(&mut updated)
        .and(&weights.weights)
        .and(&exponent)
        .for_each(|u, &w, &e| *u = w.to_f64_lossy() * (e - shift).exp());
    let sum: f64 = updated.rows().into_iter().map(|r| r.sum()).sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(Error::NonFinite(format!(
            "updated pair weights sum to {sum}"
        )));
    }
    let weights = updated.mapv(|u| S::lit(u / sum));
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("updated pair weights".into()));
    }
    Ok(PairWeightMatrix {
        weights,
        normalized: true,
    })
}

/// Training hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Target code length L.
    pub n_bits: usize,
    pub minibatch_frames: usize,
    pub epochs_per_learner: usize,
    pub learning_rate: f64,
    pub tanh_slope: f64,
    pub distance: DistanceKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_bits: 150,
            minibatch_frames: 1000,
            epochs_per_learner: 20,
            learning_rate: 0.5,
            tanh_slope: DEFAULT_TANH_SLOPE,
            distance: DistanceKind::AbsDiff,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bits == 0 {
            return Err(Error::InvalidParameter(
                "code length must be at least 1".into(),
            ));
        }
        if self.minibatch_frames < 2 {
            return Err(Error::InvalidParameter(
                "minibatch needs at least 2 frames".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if !(self.tanh_slope > 0.0 && self.tanh_slope.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tanh slope {}",
                self.tanh_slope
            )));
        }
        Ok(())
    }
}

/// Smooth surrogate of the weighted SSM loss for one projection.
///
/// The sign is replaced by `u = tanh(slope · (H p + b))`, the agreement
/// matrix by `(u uᵀ + 1) / 2`, and the distance by binary cross-entropy.
pub struct RelaxedObjective<'a, S> {
    features: ArrayView2<'a, S>,
    target: &'a Array2<S>,
    weights: &'a Array2<S>,
    slope: S,
    symmetric: bool,
}

/// Value and gradient of the relaxed objective.
#[derive(Clone, Debug)]
pub struct RelaxedEval<S> {
    pub loss: f64,
    pub grad_projection: Vec<S>,
    pub grad_bias: S,
}

fn is_symmetric<S: Real>(m: &Array2<S>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| m[[i, j]] == m[[j, i]]))
}

impl<'a, S: Real> RelaxedObjective<'a, S> {
    pub fn new(
        features: ArrayView2<'a, S>,
        target: &'a Array2<S>,
        weights: &'a PairWeightMatrix<S>,
        slope: S,
    ) -> Result<Self> {
        let t = features.nrows();
        if target.dim() != (t, t) || weights.weights.dim() != (t, t) {
            return Err(Error::ShapeMismatch(format!(
                "{t} frames, target {:?}, weights {:?}",
                target.dim(),
                weights.weights.dim()
            )));
        }
        Ok(Self {
            features,
            target,
            weights: &weights.weights,
            slope,
            symmetric: is_symmetric(target) && is_symmetric(&weights.weights),
        })
    }

    fn activations(&self, projection: &[S], bias: S) -> Array1<S> {
        let p = ndarray::ArrayView1::from(projection);
        (self.features.dot(&p) + bias).mapv(|z| (self.slope * z).tanh())
    }

    /// Per pair: (loss, dLoss/dc).
    #[inline]
    fn pair_terms(&self, i: usize, j: usize, u: &Array1<S>) -> (S, S) {
        let one = S::one();
        let d = S::lit(CE_EPS);
        let c = (u[i] * u[j] + one) * S::lit(0.5);
        let cs = d + (one - d - d) * c;
        let t = self.target[[i, j]];
        let w = self.weights[[i, j]];
        let loss = -(t * cs.ln() + (one - t) * (one - cs).ln()) * w;
        let dc = w * (one - d - d) * ((one - t) / (one - cs) - t / cs);
        (loss, dc)
    }

    pub fn loss(&self, projection: &[S], bias: S) -> f64 {
        let u = self.activations(projection, bias);
        let n = u.len();
        let partial: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| self.pair_terms(i, j, &u).0.to_f64_lossy())
                    .sum()
            })
            .collect();
        partial.iter().sum()
    }

    /// Row sums from the lower triangle only, mirrored.
    fn symmetric_rows(&self, u: &Array1<S>) -> Vec<(f64, S, S)> {
        let n = u.len();
        let lower: Vec<(f64, f64, Vec<S>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut off_diag = 0.0;
                let mut g = Vec::with_capacity(i + 1);
                for j in 0..i {
                    let (l, gij) = self.pair_terms(i, j, u);
                    off_diag += l.to_f64_lossy();
                    g.push(gij);
                }
                let (l, gii) = self.pair_terms(i, i, u);
                g.push(gii);
                (off_diag, l.to_f64_lossy(), g)
            })
            .collect();
        let mut acc = vec![S::zero(); n];
        for (i, (_, _, g)) in lower.iter().enumerate() {
            for (j, &gij) in g.iter().enumerate() {
                acc[i] = acc[i] + gij * u[j];
                if j < i {
                    acc[j] = acc[j] + gij * u[i];
                }
            }
        }
        lower
            .iter()
            .zip(acc)
            .map(|((off_diag, diag, _), a)| (2.0 * off_diag + diag, a, a))
            .collect()
    }

    pub fn eval(&self, projection: &[S], bias: S) -> Result<RelaxedEval<S>> {
        if projection.len() != self.features.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "projection of length {} for dimension {}",
                projection.len(),
                self.features.ncols()
            )));
        }
        let u = self.activations(projection, bias);
        let n = u.len();
        let half = S::lit(0.5);

        // rows[i] = (Σ_j loss_ij, Σ_j g_ij u_j, Σ_j g_ji u_j)
        let rows: Vec<(f64, S, S)> = if self.symmetric {
            self.symmetric_rows(&u)
        } else {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut loss = 0.0;
                    let mut by_row = S::zero();
                    let mut by_col = S::zero();
                    for j in 0..n {
                        let (l, g) = self.pair_terms(i, j, &u);
                        loss += l.to_f64_lossy();
                        by_row = by_row + g * u[j];
                        by_col = by_col + self.pair_terms(j, i, &u).1 * u[j];
                    }
                    (loss, by_row, by_col)
                })
                .collect()
        };

        let loss: f64 = rows.iter().map(|r| r.0).sum();
        // dc_ij/du_i = u_j / 2 and dc_ji/du_i = u_j / 2
        let delta = Array1::from_shape_fn(n, |i| {
            let du = (rows[i].1 + rows[i].2) * half;
            du * self.slope * (S::one() - u[i] * u[i])
        });
        let grad_projection = self.features.t().dot(&delta).to_vec();
        let grad_bias = delta.sum();
        if !loss.is_finite()
            || !grad_bias.is_finite()
            || grad_projection.iter().any(|g| !g.is_finite())
        {
            return Err(Error::NonFinite("relaxed objective gradient".into()));
        }
        Ok(RelaxedEval {
            loss,
            grad_projection,
            grad_bias,
        })
    }
}

/// Outcome of fitting one weak learner.
#[derive(Clone, Debug)]
pub struct WeakLearnerFit<S> {
    pub projection: Vec<S>,
    pub bias: S,
    /// Relaxed loss before the first step and after each epoch.
    pub losses: Vec<f64>,
}

impl<S> WeakLearnerFit<S> {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least the initial loss")
    }
}

/// Minimises the relaxed objective from `init` by gradient descent.
///
/// A step that would raise the loss is rejected and the step size halved;
/// accepted steps grow it slightly. The returned loss is therefore never
/// above the initial one.
pub fn fit_weak_learner<S: Real>(
    features: &FeatureMatrix<S>,
    target: &Array2<S>,
    weights: &PairWeightMatrix<S>,
    config: &TrainConfig,
    init: (Vec<S>, S),
) -> Result<WeakLearnerFit<S>> {
    config.validate()?;
    if features.n_rows() > config.minibatch_frames {
        return Err(Error::InvalidParameter(format!(
            "{} frames exceed the minibatch size {}",
            features.n_rows(),
            config.minibatch_frames
        )));
    }
    let objective = RelaxedObjective::new(
        features.rows.view(),
        target,
        weights,
        S::lit(config.tanh_slope),
    )?;
    let (mut projection, mut bias) = init;
    let mut current = objective.eval(&projection, bias)?;
    let mut losses = Vec::with_capacity(config.epochs_per_learner + 1);
    losses.push(current.loss);
    let mut lr = S::lit(config.learning_rate);

    for _ in 0..config.epochs_per_learner {
        let candidate: Vec<S> = projection
            .iter()
            .zip(&current.grad_projection)
            .map(|(&p, &g)| p - lr * g)
            .collect();
        let candidate_bias = bias - lr * current.grad_bias;
        let next = objective.eval(&candidate, candidate_bias)?;
        if next.loss <= current.loss {
            projection = candidate;
            bias = candidate_bias;
            current = next;
            lr = lr * S::lit(1.2);
        } else {
            lr = lr * S::lit(0.5);
        }
        losses.push(current.loss);
    }
    Ok(WeakLearnerFit {
        projection,
        bias,
        losses,
    })
}

/// One record per learned bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerDiagnostics {
    pub l: usize,
    pub segment: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub relaxed_loss: f64,
    pub refits: usize,
    pub wall_time_s: f64,
}

/// Trained model plus per-learner diagnostics.
#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub model: ProjectionModel<S>,
    pub diagnostics: Vec<LearnerDiagnostics>,
}

/// Splits the usable rows into consecutive minibatches of at most `size` rows.
fn segments(usable: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut segs: Vec<Vec<usize>> = usable.chunks(size).map(<[usize]>::to_vec).collect();
    if segs.len() > 1 && segs.last().is_some_and(|s| s.len() < 2) {
        let tail = segs.pop().unwrap();
        // The merged segment may exceed `size` by one row; split evenly instead.
        let mut prev = segs.pop().unwrap();
        prev.extend(tail);
        let mid = prev.len() / 2;
        let second = prev.split_off(mid);
        segs.push(prev);
        segs.push(second);
    }
    segs
}

/// Seeded standard-normal direction with zero bias.
fn initial_learner<S: Real>(dim: usize, rng: &mut ChaCha8Rng) -> (Vec<S>, S) {
    let p = (0..dim)
        .map(|_| S::lit(StandardNormal.sample(rng)))
        .collect();
    (p, S::zero())
}

fn hard_bits<S: Real>(features: &FeatureMatrix<S>, projection: &[S], bias: S) -> Vec<bool> {
    features
        .rows
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .zip(projection)
                .fold(S::zero(), |a, (&h, &w)| a + h * w)
                + bias
                >= S::zero()
        })
        .collect()
}

/// Learns `config.n_bits` projections sequentially.
pub fn train_blsh<S: Real>(
    features: &FeatureMatrix<S>,
    config: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    train_blsh_with(features, config, |_| {})
}

/// [`train_blsh`] with a callback invoked after every learner.
pub fn train_blsh_with<S: Real>(
    features: &FeatureMatrix<S>,
    config: &TrainConfig,
    mut on_learner: impl FnMut(&LearnerDiagnostics),
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    let usable = features.nonzero_indices();
    if usable.len() < 2 {
        return Err(Error::InsufficientInput(format!(
            "training needs at least 2 non-silent frames, got {}",
            usable.len()
        )));
    }
    let segs = segments(&usable, config.minibatch_frames);
    let mut pair_weights: Vec<Option<PairWeightMatrix<S>>> = vec![None; segs.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = features.dim();
    let n_bits = config.n_bits;

    let mut projections = Array2::<S>::zeros((n_bits, dim));
    let mut biases = Vec::with_capacity(n_bits);
    let mut betas = Vec::with_capacity(n_bits);
    let mut errors = Vec::with_capacity(n_bits);
    let mut diagnostics = Vec::with_capacity(n_bits);

    for l in 0..n_bits {
        let started = Instant::now();
        let seg = l % segs.len();
        let batch = features.select_rows(&segs[seg]);
        let target = target_ssm(&batch)?;
        let weights = pair_weights[seg]
            .take()
            .unwrap_or_else(|| PairWeightMatrix::uniform(batch.n_rows()));

        let mut best: Option<(WeakLearnerFit<S>, S, Array2<S>)> = None;
        let mut refits = 0;
        for attempt in 0..=MAX_REFITS {
            let init = initial_learner(dim, &mut rng);
            let fit = fit_weak_learner(&batch, &target, &weights, config, init)?;
            let code = agreement_matrix::<S>(&hard_bits(&batch, &fit.projection, fit.bias));
            let eps = weighted_ssm_error(&code, &target, &weights, config.distance)?;
            refits = attempt;
            let better = best.as_ref().is_none_or(|(_, e, _)| eps < *e);
            if better {
                best = Some((fit, eps, code));
            }
            if best
                .as_ref()
                .is_some_and(|(_, e, _)| e.to_f64_lossy() <= 0.5)
            {
                break;
            }
        }
        let (fit, eps, code) = best.expect("at least one attempt");
        let beta = beta_from_error(eps);
        pair_weights[seg] = Some(update_pair_weights(
            &weights,
            beta,
            &code,
            &target,
            config.distance,
        )?);

        projections
            .row_mut(l)
            .assign(&Array1::from(fit.projection.clone()));
        biases.push(fit.bias);
        betas.push(beta);
        errors.push(eps);
        let diag = LearnerDiagnostics {
            l: l + 1,
            segment: seg,
            epsilon: eps.to_f64_lossy(),
            beta: beta.to_f64_lossy(),
            relaxed_loss: fit.final_loss(),
            refits,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        on_learner(&diag);
        diagnostics.push(diag);
    }

    let model = ProjectionModel {
        projections,
        biases,
        betas,
        errors,
        kind: features.kind,
        tanh_slope: S::lit(config.tanh_slope),
        distance: config.distance,
    };
    model.validate()?;
    Ok(TrainOutcome { model, diagnostics })
}

/// β-weighted average of the per-bit agreement matrices, `Σ β_l c_l / Σ β_l`.
pub fn boosted_ssm<S: Real>(
    model: &ProjectionModel<S>,
    features: &FeatureMatrix<S>,
) -> Result<Array2<f64>> {
    if features.dim() != model.dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have dimension {}, model expects {}",
            features.dim(),
            model.dim()
        )));
    }
    let beta_sum: f64 = model.betas.iter().map(|b| b.to_f64_lossy()).sum();
    if beta_sum.is_nan() || beta_sum <= 0.0 {
        return Err(Error::Degenerate(format!("betas sum to {beta_sum}")));
    }
    let n = features.n_rows();
    let bits: Vec<Vec<bool>> = (0..model.n_bits())
        .map(|l| {
            (0..n)
                .map(|t| model.response(l, features.row(t)) >= S::zero())
                .collect()
        })
        .collect();
    let mut acc = Array2::<f64>::zeros((n, n));
    for (l, b) in bits.iter().enumerate() {
        let beta = model.betas[l].to_f64_lossy();
        let flat = acc.as_slice_mut().expect("standard layout");
        flat.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, a) in row.iter_mut().enumerate() {
                if b[i] == b[j] {
                    *a += beta;
                }
            }
        });
    }
    acc.mapv_inplace(|a| a / beta_sum);
    Ok(acc)
}

/// Mean absolute difference between [`boosted_ssm`] and the feature Gram matrix.
pub fn ssm_approximation_error<S: Real>(
    model: &ProjectionModel<S>,
    features: &FeatureMatrix<S>,
) -> Result<f64> {
    let target = target_ssm(features)?;
    let approx = boosted_ssm(model, features)?;
    let n = target.len() as f64;
    Ok(approx
        .iter()
        .zip(target.iter())
        .map(|(a, t)| (a - t.to_f64_lossy()).abs())
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FeatureKind;
    use ndarray::array;
    use rand::Rng;

    fn features(raw: Array2<f64>) -> FeatureMatrix<f64> {
        FeatureMatrix::from_raw(raw, FeatureKind::StftMagnitude).unwrap()
    }

    fn random_unit(t: usize, d: usize, seed: u64) -> FeatureMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        features(Array2::from_shape_simple_fn((t, d), || {
            rng.random_range(0.0..1.0)
        }))
    }

    /// Two tight clusters on nearly orthogonal directions.
    fn two_clusters(per: usize, seed: u64) -> FeatureMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 8;
        let raw = Array2::from_shape_fn((2 * per, d), |(t, k)| {
            let hot = if t < per { k < 4 } else { k >= 4 };
            (if hot { 1.0 } else { 0.02 }) + rng.random_range(0.0..0.05)
        });
        features(raw)
    }

    #[test]
    fn target_of_orthogonal_and_duplicate_rows() {
        let f = features(array![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 3.0, 0.0]]);
        let g = target_ssm(&f).unwrap();
        assert_eq!(g[[0, 1]], 0.0);
        assert_eq!(g[[1, 2]], 1.0);
        assert_eq!(g[[0, 0]], 1.0);
    }

    #[test]
    fn target_matches_double_loop() {
        let f = random_unit(5, 3, 1);
        let g = target_ssm(&f).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = (0..3).map(|k| f.rows[[i, k]] * f.rows[[j, k]]).sum();
                assert!((g[[i, j]] - dot).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn target_rejects_unnormalized_rows() {
        let mut f = random_unit(4, 3, 1);
        f.rows[[0, 0]] += 0.5;
        assert!(target_ssm(&f).is_err());
        let z = features(array![[1.0, 0.0], [0.0, 0.0]]);
        assert!(target_ssm(&z).is_err());
    }

    #[test]
    fn code_ssm_examples() {
        let all: Array2<f64> = code_ssm(&[1, 1, 1]).unwrap();
        assert!(all.iter().all(|&v| v == 1.0));
        let two: Array2<f64> = code_ssm(&[1, -1]).unwrap();
        assert_eq!(two, array![[1.0, 0.0], [0.0, 1.0]]);
        assert!(code_ssm::<f64>(&[1, 0]).is_err());
    }

    #[test]
    fn code_ssm_matches_agreement_oracle_and_is_sign_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c: Vec<i8> = (0..20)
            .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
            .collect();
        let neg: Vec<i8> = c.iter().map(|v| -v).collect();
        let m: Array2<f64> = code_ssm(&c).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(m[[i, j]], ((c[i] as f64 * c[j] as f64) + 1.0) / 2.0);
            }
        }
        assert_eq!(m, code_ssm(&neg).unwrap());
    }

    #[test]
    fn error_zero_for_exact_and_one_for_complement() {
        let target: Array2<f64> = code_ssm(&[1, -1, 1, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = PairWeightMatrix::from_weights(Array2::from_shape_simple_fn((4, 4), || {
            rng.random_range(0.1..1.0)
        }))
        .unwrap()
        .normalize()
        .unwrap();
        assert_eq!(
            weighted_ssm_error(&target, &target, &w, DistanceKind::AbsDiff).unwrap(),
            0.0
        );
        let flipped = target.mapv(|v| 1.0 - v);
        let e = weighted_ssm_error(
            &flipped,
            &target,
            &PairWeightMatrix::uniform(4),
            DistanceKind::AbsDiff,
        )
        .unwrap();
        assert!((e - 1.0).abs() < 1e-15);
    }

    #[test]
    fn error_hand_computed_3x3() {
        let code = array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]];
        let target = array![[1.0, 0.2, 0.7], [0.2, 1.0, 0.4], [0.7, 0.4, 1.0]];
        let w = PairWeightMatrix::from_weights(array![
            [1.0, 2.0, 1.0],
            [2.0, 1.0, 1.0],
            [1.0, 1.0, 0.0]
        ])
        .unwrap()
        .normalize()
        .unwrap();
        // |0-0.2|*2*2 + |1-0.7|*1*2 + |0-0.4|*1*2 = 0.8 + 0.6 + 0.8 = 2.2, over total weight 10
        let e: f64 = weighted_ssm_error(&code, &target, &w, DistanceKind::AbsDiff).unwrap();
        assert!((e - 0.22).abs() < 1e-15);
    }

    #[test]
    fn error_requires_normalized_weights() {
        let code: Array2<f64> = Array2::ones((2, 2));
        let w = PairWeightMatrix::from_weights(Array2::ones((2, 2))).unwrap();
        assert!(!w.is_normalized());
        assert!(weighted_ssm_error(&code, &code, &w, DistanceKind::AbsDiff).is_err());
    }

    #[test]
    fn complement_codes_sum_to_one_on_binary_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t: Vec<i8> = (0..9)
            .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
            .collect();
        let target: Array2<f64> = code_ssm(&t).unwrap();
        let code: Array2<f64> = code_ssm(&[1, 1, -1, 1, -1, -1, 1, 1, 1]).unwrap();
        let w = PairWeightMatrix::from_weights(Array2::from_shape_simple_fn((9, 9), || {
            rng.random_range(0.0..1.0)
        }))
        .unwrap()
        .normalize()
        .unwrap();
        let a = weighted_ssm_error(&code, &target, &w, DistanceKind::AbsDiff).unwrap();
        let b = weighted_ssm_error(&code.mapv(|v| 1.0 - v), &target, &w, DistanceKind::AbsDiff)
            .unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beta_values() {
        assert_eq!(beta_from_error(0.5f64), 0.0);
        assert!((beta_from_error(0.1f64) - 0.5 * 9f64.ln()).abs() < 1e-12);
        let e = 1.0 / (1.0 + 2f64.exp());
        assert!((beta_from_error(e) - 1.0).abs() < 1e-12);
        assert!(beta_from_error(0.0f64).is_finite());
        assert!(beta_from_error(1.0f64).is_finite());
        assert!((beta_from_error(0.3f64) + beta_from_error(0.7f64)).abs() < 1e-12);
    }

    #[test]
    fn weight_update_hand_example() {
        let w = PairWeightMatrix::<f64>::uniform(2);
        let code = array![[1.0, 1.0], [1.0, 1.0]];
        let target = array![[1.0, 0.0], [0.0, 1.0]];
        let u = update_pair_weights(&w, 2f64.ln(), &code, &target, DistanceKind::AbsDiff).unwrap();
        let expect = array![[1.0 / 6.0, 2.0 / 6.0], [2.0 / 6.0, 1.0 / 6.0]];
        for (a, b) in u.weights().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(u.is_normalized());
    }

    #[test]
    fn weight_update_no_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = PairWeightMatrix::from_weights(Array2::from_shape_simple_fn((5, 5), || {
            rng.random_range(0.0..1.0)
        }))
        .unwrap()
        .normalize()
        .unwrap();
        let code: Array2<f64> = code_ssm(&[1, -1, 1, 1, -1]).unwrap();
        let same = update_pair_weights(&w, 0.7, &code, &code, DistanceKind::AbsDiff).unwrap();
        let zero_beta = update_pair_weights(
            &w,
            0.0,
            &code,
            &code.mapv(|v| 0.3 * v),
            DistanceKind::AbsDiff,
        )
        .unwrap();
        for ((a, b), c) in w
            .weights()
            .iter()
            .zip(same.weights())
            .zip(zero_beta.weights())
        {
            assert!((a - b).abs() < 1e-15);
            assert!((a - c).abs() < 1e-15);
        }
        assert!(
            update_pair_weights(&w, f64::INFINITY, &code, &code, DistanceKind::AbsDiff).is_err()
        );
    }

    #[test]
    fn relaxed_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_unit(8, 4, seed);
            let target = target_ssm(&f).unwrap();
            // asymmetric weights exercise the general path
            let w = PairWeightMatrix::from_weights(Array2::from_shape_simple_fn((8, 8), || {
                rng.random_range(0.1..1.0)
            }))
            .unwrap()
            .normalize()
            .unwrap();
            let obj = RelaxedObjective::new(f.rows.view(), &target, &w, 2.0).unwrap();
            let p: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = rng.random_range(-0.5..0.5);
            let ev = obj.eval(&p, b).unwrap();
            let h = 1e-6;
            for k in 0..4 {
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi[k] += h;
                lo[k] -= h;
                let fd = (obj.loss(&hi, b) - obj.loss(&lo, b)) / (2.0 * h);
                let rel = (fd - ev.grad_projection[k]).abs() / fd.abs().max(1e-8);
                assert!(
                    rel < 1e-4,
                    "seed {seed} k {k}: fd {fd} analytic {}",
                    ev.grad_projection[k]
                );
            }
            let fd = (obj.loss(&p, b + h) - obj.loss(&p, b - h)) / (2.0 * h);
            assert!((fd - ev.grad_bias).abs() / fd.abs().max(1e-8) < 1e-4);
        }
    }

    #[test]
    fn zero_epochs_returns_init() {
        let f = two_clusters(10, 1);
        let target = target_ssm(&f).unwrap();
        let w = PairWeightMatrix::uniform(20);
        let config = TrainConfig {
            epochs_per_learner: 0,
            ..TrainConfig::default()
        };
        let init = (vec![0.3; 8], -0.1);
        let fit = fit_weak_learner(&f, &target, &w, &config, init.clone()).unwrap();
        assert_eq!(fit.projection, init.0);
        assert_eq!(fit.bias, init.1);
        assert_eq!(fit.losses.len(), 1);
    }

    #[test]
    fn losses_never_increase() {
        let f = random_unit(60, 6, 3);
        let target = target_ssm(&f).unwrap();
        let w = PairWeightMatrix::uniform(60);
        let config = TrainConfig {
            epochs_per_learner: 30,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fit =
            fit_weak_learner(&f, &target, &w, &config, initial_learner(f.dim(), &mut rng)).unwrap();
        assert!(fit.losses.windows(2).all(|p| p[1] <= p[0]));
        assert!(fit.final_loss() < fit.losses[0]);
    }

    #[test]
    fn separable_clusters_are_learned() {
        let f = two_clusters(15, 2);
        let target = target_ssm(&f).unwrap();
        let w = PairWeightMatrix::uniform(30);
        let config = TrainConfig::default();
        // start from a direction that ignores the cluster structure
        let init = (vec![0.1; 8], 0.0);
        let fit = fit_weak_learner(&f, &target, &w, &config, init).unwrap();
        let code = agreement_matrix::<f64>(&hard_bits(&f, &fit.projection, fit.bias));
        let eps = weighted_ssm_error(&code, &target, &w, DistanceKind::AbsDiff).unwrap();
        assert!(eps < 0.5, "eps {eps}");
        assert!(fit.final_loss() <= fit.losses[0]);
    }

    #[test]
    fn single_bit_splits_two_clusters() {
        let f = two_clusters(20, 5);
        let config = TrainConfig {
            n_bits: 1,
            ..TrainConfig::default()
        };
        let out = train_blsh(&f, &config).unwrap();
        let bits: Vec<bool> = (0..40)
            .map(|t| out.model.response(0, f.row(t)) >= 0.0)
            .collect();
        let mut agree = 0;
        let mut total = 0;
        for i in 0..40 {
            for j in 0..40 {
                if i == j {
                    continue;
                }
                let same_cluster = (i < 20) == (j < 20);
                agree += usize::from((bits[i] == bits[j]) == same_cluster);
                total += 1;
            }
        }
        assert!(agree as f64 >= 0.9 * total as f64, "{agree}/{total}");
        assert!(out.diagnostics[0].epsilon < 0.5);
        assert!(out.model.betas[0] > 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let f = random_unit(50, 6, 9);
        let config = TrainConfig {
            n_bits: 4,
            minibatch_frames: 20,
            epochs_per_learner: 10,
            ..TrainConfig::default()
        };
        let a = train_blsh(&f, &config).unwrap();
        let b = train_blsh(&f, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.diagnostics.len(), 4);
        // 50 rows in batches of 20 -> 3 segments visited round robin
        let segs: Vec<usize> = a.diagnostics.iter().map(|d| d.segment).collect();
        assert_eq!(segs, vec![0, 1, 2, 0]);
    }

    #[test]
    fn training_skips_silent_rows_and_needs_two() {
        let mut raw = Array2::zeros((5, 3));
        raw[[0, 0]] = 1.0;
        let f = features(raw.clone());
        assert!(matches!(
            train_blsh(
                &f,
                &TrainConfig {
                    n_bits: 1,
                    ..TrainConfig::default()
                }
            ),
            Err(Error::InsufficientInput(_))
        ));
        raw[[3, 1]] = 1.0;
        let f = features(raw);
        let out = train_blsh(
            &f,
            &TrainConfig {
                n_bits: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert_eq!(out.model.n_bits(), 2);
    }

    #[test]
    fn segmentation_never_leaves_singletons() {
        let rows: Vec<usize> = (0..2001).collect();
        let segs = segments(&rows, 1000);
        assert!(segs.iter().all(|s| s.len() >= 2 && s.len() <= 1000));
        assert_eq!(segs.iter().map(Vec::len).sum::<usize>(), 2001);
        assert_eq!(segments(&rows[..5], 1000).len(), 1);
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                n_bits: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                minibatch_frames: 1,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                tanh_slope: -1.0,
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn distance_kind_parsing() {
        assert_eq!(
            "abs_diff".parse::<DistanceKind>().unwrap(),
            DistanceKind::AbsDiff
        );
        assert_eq!(
            "cross_entropy".parse::<DistanceKind>().unwrap(),
            DistanceKind::CrossEntropy
        );
        assert!("l2".parse::<DistanceKind>().is_err());
        assert_eq!(
            DistanceKind::from_code(DistanceKind::CrossEntropy.code()),
            Some(DistanceKind::CrossEntropy)
        );
    }
}
