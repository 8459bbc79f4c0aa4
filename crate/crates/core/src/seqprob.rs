//! Sequence probabilities from per-step token scores.
//!
//! All logarithms are natural. Log-sum-exp is evaluated with the running
//! maximum subtracted, so large logits never overflow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeqProbError {
    #[error("step list is empty")]
    NoSteps,
    #[error("step {step} has an empty score vector")]
    EmptyStep { step: usize },
    #[error("step {step} has a non-finite score")]
    NonFiniteScore { step: usize },
    #[error("chosen index {index} out of range for vocabulary of {len}")]
    ChosenOutOfRange { index: usize, len: usize },
    #[error("temperature must be a finite value > 0, got {0}")]
    InvalidTemperature(f64),
    #[error("weights must be finite and non-negative")]
    InvalidWeight,
    #[error("weights sum to zero")]
    ZeroMass,
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("no candidate temperatures to fit")]
    NoTemperatures,
    #[error("fit case {case} has zero mass on its target")]
    ZeroTargetMass { case: usize },
}

/// Scores produced at one decoding step, plus the index of the token that was
/// actually emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLogits {
    scores: Vec<f64>,
    chosen_index: usize,
}

impl StepLogits {
    pub fn new(scores: Vec<f64>, chosen_index: usize) -> Result<Self, SeqProbError> {
        let step = StepLogits {
            scores,
            chosen_index,
        };
        step.validate(0)?;
        Ok(step)
    }

    pub(crate) fn validate(&self, step: usize) -> Result<(), SeqProbError> {
        if self.scores.is_empty() {
            return Err(SeqProbError::EmptyStep { step });
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(SeqProbError::NonFiniteScore { step });
        }
        if self.chosen_index >= self.scores.len() {
            return Err(SeqProbError::ChosenOutOfRange {
                index: self.chosen_index,
                len: self.scores.len(),
            });
        }
        Ok(())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn chosen_index(&self) -> usize {
        self.chosen_index
    }
}

/// A softmax temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self, SeqProbError> {
        if t.is_finite() && t > 0.0 {
            Ok(Temperature(t))
        } else {
            Err(SeqProbError::InvalidTemperature(t))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = SeqProbError;

    fn try_from(t: f64) -> Result<Self, Self::Error> {
        Temperature::new(t)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// Log-probability of the chosen token under `softmax(scores / t)`.
///
/// Written as `(z_c - m) - ln Σ exp(z_j - m)` with `m` the maximum, which is
/// never positive: the first term is ≤ 0 and the sum contains `exp(0) = 1`.
fn log_softmax_at(scores: &[f64], chosen: usize, t: f64) -> f64 {
    let max = scores
        .iter()
        .map(|z| z / t)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|z| (z / t - max).exp()).sum();
    (scores[chosen] / t - max) - sum.ln()
}

/// Total log-likelihood of a decoded sequence.
pub fn sequence_logprob(steps: &[StepLogits]) -> Result<f64, SeqProbError> {
    sequence_logprob_scaled(steps, Temperature::ONE)
}

/// Total log-likelihood with every step's scores divided by `temp`.
///
/// Dividing by exactly 1.0 is the identity in IEEE arithmetic, so at `T = 1`
/// this is bit-identical to [`sequence_logprob`].
pub fn sequence_logprob_scaled(
    steps: &[StepLogits],
    temp: Temperature,
) -> Result<f64, SeqProbError> {
    if steps.is_empty() {
        return Err(SeqProbError::NoSteps);
    }
    let mut total = 0.0;
    for (i, step) in steps.iter().enumerate() {
        step.validate(i)?;
        total += log_softmax_at(&step.scores, step.chosen_index, temp.get());
    }
    Ok(total)
}

/// `softmax(scores / temp)`.
pub fn softmax_scaled(scores: &[f64], temp: Temperature) -> Result<Vec<f64>, SeqProbError> {
    if scores.is_empty() {
        return Err(SeqProbError::EmptyStep { step: 0 });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SeqProbError::NonFiniteScore { step: 0 });
    }
    let t = temp.get();
    let max = scores
        .iter()
        .map(|z| z / t)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|z| (z / t - max).exp()).collect();
    normalize(&exps)
}

/// Scale non-negative weights to sum to one.
pub fn normalize(weights: &[f64]) -> Result<Vec<f64>, SeqProbError> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(SeqProbError::InvalidWeight);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(SeqProbError::ZeroMass);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64, SeqProbError> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(SeqProbError::InvalidWeight);
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SeqProbError::NotNormalized(total));
    }
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    Ok(h.max(0.0))
}

/// Temperature-scale a probability vector over a closed candidate set.
///
/// The candidates are treated as a one-step vocabulary whose logits are the
/// log-probabilities, so the result is `p^(1/T)` renormalized. Zero-mass
/// entries have no finite logit and stay at zero.
pub fn temperature_scale(probs: &[f64], temp: Temperature) -> Result<Vec<f64>, SeqProbError> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(SeqProbError::InvalidWeight);
    }
    let support: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    if support.is_empty() {
        return Err(SeqProbError::ZeroMass);
    }
    let logits: Vec<f64> = support.iter().map(|&i| probs[i].ln()).collect();
    let scaled = softmax_scaled(&logits, temp)?;
    let mut out = vec![0.0; probs.len()];
    for (slot, p) in support.into_iter().zip(scaled) {
        out[slot] = p;
    }
    Ok(out)
}

/// One fitting case for [`fit_temperature`]: a probability vector over a
/// candidate set and the index of the correct answer.
#[derive(Debug, Clone)]
pub struct FitCase {
    pub probs: Vec<f64>,
    pub target: usize,
}

/// Outcome of a temperature grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureFit {
    pub temperature: Temperature,
    pub mean_nll: f64,
}

/// Pick the temperature from `grid` that minimises the mean negative
/// log-likelihood of the correct answers. Ties keep the earlier grid entry.
pub fn fit_temperature(
    cases: &[FitCase],
    grid: &[Temperature],
) -> Result<TemperatureFit, SeqProbError> {
    if grid.is_empty() {
        return Err(SeqProbError::NoTemperatures);
    }
    if cases.is_empty() {
        return Err(SeqProbError::ZeroMass);
    }
    let mut best: Option<TemperatureFit> = None;
    for &t in grid {
        let mut nll = 0.0;
        for (i, case) in cases.iter().enumerate() {
            let scaled = temperature_scale(&case.probs, t)?;
            let p = scaled.get(case.target).copied().unwrap_or(0.0);
            if p <= 0.0 {
                return Err(SeqProbError::ZeroTargetMass { case: i });
            }
            nll -= p.ln();
        }
        let mean_nll = nll / cases.len() as f64;
        if best.is_none_or(|b| mean_nll < b.mean_nll) {
            best = Some(TemperatureFit {
                temperature: t,
                mean_nll,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}
