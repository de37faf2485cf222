//! Multi-source generalization-bound calculator and an empirical proxy for
//! the pairwise domain divergence.
//!
//! The bound combines three pieces for a target domain T and N weighted
//! source domains:
//!
//! ```text
//! total = eps_star
//!       + sum_i alpha_i * (2 * lambda_i + div_i)
//!       + 2 * sqrt( (sum_i alpha_i^2 / beta_i)
//!                   * (d * ln(2m) - ln(delta)) / (2m) )
//! ```
//!
//! where `eps_star` is the best-in-class target risk, `lambda_i` the joint
//! optimal risk of source i and the target, `div_i` the divergence between
//! source i and the target, `alpha_i` the mixing weights (summing to 1),
//! `beta_i` the fraction of the `m` total samples drawn from source i, `d`
//! a capacity measure of the hypothesis class, and `delta` the confidence
//! level. Single-source and uniform-weight specializations are computed by
//! *independent* arithmetic so the general formula can be cross-checked
//! against them in tests.
//!
//! All logarithms are natural.

use crate::error::{Error, Result};
use crate::learner::{argmax, softmax, LearnerState};
use crate::scalar::{real, real_of_usize, Real};
use crate::tensor::Tensor;

/// Inputs to the bound. `alpha`, `beta`, `lambda`, and `div` are indexed by
/// source; their common length is the number of sources.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs<S> {
    /// Capacity measure of the hypothesis class (e.g. VC dimension).
    pub d_vc: u64,
    /// Total labeled sample count across all sources.
    pub m: u64,
    /// Confidence level in (0, 1).
    pub delta: S,
    /// Source mixing weights; must sum to 1.
    pub alpha: Vec<S>,
    /// Per-source sample fractions; must sum to 1, with `beta_i > 0`
    /// wherever `alpha_i > 0`.
    pub beta: Vec<S>,
    /// Joint optimal risks per source.
    pub lambda: Vec<S>,
    /// Source-target divergences.
    pub div: Vec<S>,
    /// Best achievable target risk.
    pub eps_star: S,
}

impl<S: Real> BoundInputs<S> {
    pub fn sources(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.alpha.len();
        if n == 0 {
            return Err(Error::InvalidParameter("bound needs at least one source".into()));
        }
        if self.beta.len() != n || self.lambda.len() != n || self.div.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "per-source vectors disagree: alpha {n}, beta {}, lambda {}, div {}",
                self.beta.len(),
                self.lambda.len(),
                self.div.len()
            )));
        }
        if self.d_vc == 0 {
            return Err(Error::InvalidParameter("capacity d must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidParameter("sample count m must be at least 1".into()));
        }
        if !(self.delta > S::zero() && self.delta < S::one()) {
            return Err(Error::InvalidParameter(format!(
                "delta {} outside (0, 1)",
                self.delta
            )));
        }
        if !self.eps_star.is_finite() || self.eps_star < S::zero() {
            return Err(Error::InvalidParameter(format!(
                "eps_star {} must be finite and non-negative",
                self.eps_star
            )));
        }
        let mut alpha_sum = S::zero();
        for (i, &a) in self.alpha.iter().enumerate() {
            if !a.is_finite() || a < S::zero() {
                return Err(Error::InvalidParameter(format!("alpha[{i}] = {a} invalid")));
            }
            alpha_sum += a;
            let b = self.beta[i];
            if !b.is_finite() || b < S::zero() {
                return Err(Error::InvalidParameter(format!("beta[{i}] = {b} invalid")));
            }
            if a > S::zero() && !(b > S::zero()) {
                return Err(Error::InvalidParameter(format!(
                    "beta[{i}] = 0 while alpha[{i}] = {a} > 0"
                )));
            }
            let l = self.lambda[i];
            if !l.is_finite() || l < S::zero() {
                return Err(Error::InvalidParameter(format!("lambda[{i}] = {l} invalid")));
            }
            let dv = self.div[i];
            if !dv.is_finite() || dv < S::zero() {
                return Err(Error::InvalidParameter(format!("div[{i}] = {dv} invalid")));
            }
        }
        // Tolerance scales with precision so f32 inputs validate too.
        let tol = S::epsilon().sqrt();
        if (alpha_sum - S::one()).abs() > tol {
            return Err(Error::InvalidParameter(format!(
                "alpha weights sum to {alpha_sum}, expected 1"
            )));
        }
        let mut beta_sum = S::zero();
        for &b in &self.beta {
            beta_sum += b;
        }
        if (beta_sum - S::one()).abs() > tol {
            return Err(Error::InvalidParameter(format!(
                "beta fractions sum to {beta_sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// `d * ln(2m) - ln(delta)`, shared by every specialization.
    fn log_capacity(&self) -> S {
        let d: S = real(self.d_vc as f64);
        let two_m: S = real(2.0 * self.m as f64);
        d * two_m.ln() - self.delta.ln()
    }

    /// Per-source shift terms `s_i = 2 * lambda_i + div_i`.
    fn shift_terms(&self) -> Vec<S> {
        let two = real::<S>(2.0);
        self.lambda
            .iter()
            .zip(self.div.iter())
            .map(|(&l, &dv)| two * l + dv)
            .collect()
    }
}

/// Bound value with its additive pieces, for reporting and term-level tests.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport<S> {
    pub total: S,
    pub eps_star: S,
    /// `sum_i alpha_i * s_i`.
    pub weighted_shift: S,
    /// The sampling-complexity square-root term.
    pub complexity: S,
    /// Per-source `s_i = 2 * lambda_i + div_i`.
    pub shift_terms: Vec<S>,
    /// `eps_star + 2 * sqrt((d * ln(2m) - ln(delta)) / (2m))`: the common
    /// prefix of the single-source and uniform specializations.
    pub c_delta: S,
}

/// General weighted multi-source bound.
pub fn multi_source_bound<S: Real>(inputs: &BoundInputs<S>) -> Result<BoundReport<S>> {
    inputs.validate()?;
    let shift_terms = inputs.shift_terms();
    let mut weighted_shift = S::zero();
    for (&a, &s) in inputs.alpha.iter().zip(shift_terms.iter()) {
        weighted_shift += a * s;
    }
    let mut weight_ratio = S::zero();
    for (&a, &b) in inputs.alpha.iter().zip(inputs.beta.iter()) {
        if a > S::zero() {
            weight_ratio += a * a / b;
        }
    }
    let two_m: S = real(2.0 * inputs.m as f64);
    let complexity = real::<S>(2.0) * (weight_ratio * inputs.log_capacity() / two_m).sqrt();
    let total = inputs.eps_star + weighted_shift + complexity;
    Ok(BoundReport {
        total,
        eps_star: inputs.eps_star,
        weighted_shift,
        complexity,
        shift_terms,
        c_delta: c_delta(inputs),
    })
}

/// `c_delta = eps_star + 2 * sqrt((d * ln(2m) - ln(delta)) / (2m))`.
fn c_delta<S: Real>(inputs: &BoundInputs<S>) -> S {
    let two_m: S = real(2.0 * inputs.m as f64);
    inputs.eps_star + real::<S>(2.0) * (inputs.log_capacity() / two_m).sqrt()
}

/// Bound when training on source `k` alone (all weight and all samples on
/// one source): `c_delta + s_k`. Computed directly from the inputs, not by
/// delegating to `multi_source_bound`, so the two routes stay independent.
pub fn single_source_bound<S: Real>(inputs: &BoundInputs<S>, k: usize) -> Result<S> {
    inputs.validate()?;
    if k >= inputs.sources() {
        return Err(Error::InvalidParameter(format!(
            "source index {k} out of range [0, {})",
            inputs.sources()
        )));
    }
    let two = real::<S>(2.0);
    let s_k = two * inputs.lambda[k] + inputs.div[k];
    Ok(c_delta(inputs) + s_k)
}

/// Bound for the uniform mixture over all sources with proportional
/// sampling: `c_delta + mean_i s_i`. Independent arithmetic, same caveat as
/// `single_source_bound`.
pub fn uniform_multi_bound<S: Real>(inputs: &BoundInputs<S>) -> Result<S> {
    inputs.validate()?;
    let two = real::<S>(2.0);
    let mut mean_shift = S::zero();
    for (&l, &dv) in inputs.lambda.iter().zip(inputs.div.iter()) {
        mean_shift += two * l + dv;
    }
    mean_shift /= real_of_usize(inputs.sources());
    Ok(c_delta(inputs) + mean_shift)
}

/// Fixed seed for the probe classifier inside the divergence estimate. The
/// estimate is part of reported numbers, so it must not depend on ambient
/// RNG state.
const PROBE_SEED: u64 = 0x9e3779b97f4a7c15;
const PROBE_HIDDEN: usize = 64;
const PROBE_LR: f64 = 0.1;

/// Empirical divergence proxy between two feature samples, in [0, 2].
///
/// Trains a small two-way probe to separate source (label 0) from target
/// (label 1) features, then maps its held-out accuracy `acc` through
/// `2 * (2 * acc - 1)`, clamped to [0, 2]: indistinguishable features give
/// 0, perfectly separable ones give 2.
///
/// The probe's output layer starts at zero, which makes the whole training
/// trajectory symmetric under swapping the two labels — so swapping the
/// source and target arguments returns the same value.
pub fn estimate_proxy_divergence<S: Real>(source: &[Vec<S>], target: &[Vec<S>]) -> Result<S> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput("divergence needs samples on both sides".into()));
    }
    let dim = source[0].len();
    if dim == 0 {
        return Err(Error::InvalidInput("zero-width features".into()));
    }
    for f in source.iter().chain(target.iter()) {
        if f.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "feature width {} does not match {}",
                f.len(),
                dim
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("non-finite feature value".into()));
        }
    }

    let split = |xs: &[Vec<S>]| -> (Vec<Vec<S>>, Vec<Vec<S>>) {
        // Even indices train, odd indices evaluate; a single sample does
        // both (degenerate but total).
        if xs.len() < 2 {
            return (xs.to_vec(), xs.to_vec());
        }
        let train = xs.iter().step_by(2).cloned().collect();
        let held = xs.iter().skip(1).step_by(2).cloned().collect();
        (train, held)
    };
    let (src_train, src_held) = split(source);
    let (tgt_train, tgt_held) = split(target);

    let mut probe = LearnerState::<S>::mlp(dim, &[PROBE_HIDDEN], 2, PROBE_SEED)?;
    probe.zero_final_layer();
    let lr: S = real(PROBE_LR);
    let steps = src_train.len().max(tgt_train.len());
    for i in 0..steps {
        let s = Tensor::from_vec(src_train[i % src_train.len()].clone());
        let t = Tensor::from_vec(tgt_train[i % tgt_train.len()].clone());
        let batch = [
            (&s, &crate::learner::SampleLabel::Class(0)),
            (&t, &crate::learner::SampleLabel::Class(1)),
        ];
        let (grads, _) = probe.backward_batch(&batch, crate::learner::LossKind::CrossEntropy)?;
        probe.sgd_step(&grads, lr)?;
    }

    let mut correct = 0usize;
    let mut total = 0usize;
    for (feats, label) in [(&src_held, 0usize), (&tgt_held, 1usize)] {
        for f in feats.iter() {
            let x = Tensor::from_vec(f.clone());
            let (logits, _) = probe.forward(&x)?;
            total += 1;
            if argmax(&logits) == label {
                correct += 1;
            }
        }
    }
    let acc = real_of_usize::<S>(correct) / real_of_usize(total);
    let two = real::<S>(2.0);
    let raw = two * (two * acc - S::one());
    Ok(raw.max(S::zero()).min(two))
}

/// Probability the probe assigns to "target" for one feature vector,
/// clamped away from {0, 1} so its logarithm stays finite.
pub fn target_probability<S: Real>(probe: &LearnerState<S>, features: &[S]) -> Result<S> {
    let x = Tensor::from_vec(features.to_vec());
    let (logits, _) = probe.forward(&x)?;
    if logits.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "domain probe emits {} logits, expected 2",
            logits.len()
        )));
    }
    let p = softmax(&logits)[1];
    let lo: S = real(1e-6);
    let hi = S::one() - lo;
    Ok(p.max(lo).min(hi))
}
