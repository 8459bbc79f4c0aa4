//! Deterministic pseudo-model scorers.
//!
//! A scorer returns a probability for any numeric answer, which lets the
//! whole pipeline run without a model. Scores are probabilities directly;
//! `ln` is applied only when writing [`CandidateScore`] rows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CandidateScore, CandidateSource, ScoredDistribution};
use crate::nice::{self, NeighborhoodGrid, NiceConfig, NiceError, ProbabilitySource};
use crate::number::{format_fixed, ValueKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid scorer: {0}")]
    InvalidScorer(String),
    #[error("requested {k} beams but only {available} candidate points exist")]
    TooManyBeams { k: usize, available: usize },
    #[error("only {0} candidate points carry mass, need at least 2 beams")]
    TooFewNonzero(usize),
    #[error(transparent)]
    Nice(#[from] NiceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SyntheticScorer {
    Spike { value: f64, base_mass: f64 },
    Gaussian { mu: f64, sigma: f64, base_mass: f64 },
    Uniform { lo: f64, hi: f64, base_mass: f64 },
}

impl SyntheticScorer {
    pub fn base_mass(&self) -> f64 {
        match *self {
            SyntheticScorer::Spike { base_mass, .. }
            | SyntheticScorer::Gaussian { base_mass, .. }
            | SyntheticScorer::Uniform { base_mass, .. } => base_mass,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |msg: String| Err(OracleError::InvalidScorer(msg));
        let base = self.base_mass();
        if !(base > 0.0 && base <= 1.0) {
            return bad(format!("base_mass must lie in (0, 1], got {base}"));
        }
        match *self {
            SyntheticScorer::Spike { value, .. } if !value.is_finite() => {
                bad(format!("spike value {value} is not finite"))
            }
            SyntheticScorer::Gaussian { mu, sigma, .. } => {
                if !mu.is_finite() {
                    bad(format!("mu {mu} is not finite"))
                } else if !(sigma.is_finite() && sigma > 0.0) {
                    bad(format!("sigma must be > 0, got {sigma}"))
                } else {
                    Ok(())
                }
            }
            SyntheticScorer::Uniform { lo, hi, .. }
                if !(lo.is_finite() && hi.is_finite() && lo < hi) =>
            {
                bad(format!("need lo < hi, got [{lo}, {hi}]"))
            }
            _ => Ok(()),
        }
    }

    /// Probability assigned to `value`.
    pub fn score(&self, value: f64) -> f64 {
        match *self {
            SyntheticScorer::Spike {
                value: at,
                base_mass,
            } => {
                if ValueKey::of(value) == ValueKey::of(at) {
                    base_mass
                } else {
                    0.0
                }
            }
            SyntheticScorer::Gaussian {
                mu,
                sigma,
                base_mass,
            } => base_mass * (-(value - mu).powi(2) / (2.0 * sigma * sigma)).exp(),
            SyntheticScorer::Uniform { lo, hi, base_mass } => {
                if (lo..=hi).contains(&value) {
                    base_mass
                } else {
                    0.0
                }
            }
        }
    }
}

impl ProbabilitySource for SyntheticScorer {
    fn prob(&self, value: f64) -> f64 {
        self.score(value)
    }
}

/// Sum of component scorers, clamped to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeScorer {
    pub parts: Vec<SyntheticScorer>,
}

impl CompositeScorer {
    pub fn new(parts: Vec<SyntheticScorer>) -> Result<Self, OracleError> {
        if parts.is_empty() {
            return Err(OracleError::InvalidScorer(
                "composite needs a component".into(),
            ));
        }
        for p in &parts {
            p.validate()?;
        }
        Ok(CompositeScorer { parts })
    }
}

impl ProbabilitySource for CompositeScorer {
    fn prob(&self, value: f64) -> f64 {
        self.parts
            .iter()
            .map(|p| p.score(value))
            .sum::<f64>()
            .min(1.0)
    }
}

fn candidate(value: f64, digits: usize, p: f64, source: CandidateSource) -> CandidateScore {
    CandidateScore {
        value,
        text: format_fixed(value, digits),
        logprob: p.ln(),
        source,
    }
}

/// The `k` highest-scoring points of `grid ∪ {anchor}` as beam candidates.
/// Ties go to the smaller value; zero-score points are never beams.
pub fn beam_sample(
    item_id: &str,
    scorer: &impl ProbabilitySource,
    k: usize,
    grid: &NeighborhoodGrid,
) -> Result<ScoredDistribution, OracleError> {
    let points = grid.with_anchor();
    if k > points.len() {
        return Err(OracleError::TooManyBeams {
            k,
            available: points.len(),
        });
    }
    let mut scored: Vec<(f64, f64)> = points
        .into_iter()
        .map(|v| (v, scorer.prob(v)))
        .filter(|&(_, p)| p > 0.0)
        .collect();
    if scored.len() < 2 {
        return Err(OracleError::TooFewNonzero(scored.len()));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    scored.truncate(k);
    Ok(ScoredDistribution {
        item_id: item_id.to_string(),
        candidates: scored
            .into_iter()
            .map(|(v, p)| candidate(v, grid.digits(), p, CandidateSource::Beam))
            .collect(),
    })
}

/// Beams around `truth` plus GRID_QUERY rows for every other value the NICE
/// metrics read. Points with zero score are omitted; unscored values count
/// as zero mass downstream.
pub fn simulate_item(
    item_id: &str,
    truth: f64,
    scorer: &impl ProbabilitySource,
    cfg: &NiceConfig,
) -> Result<ScoredDistribution, OracleError> {
    cfg.validate()?;
    let grid = nice::build_grid(truth, cfg)?;
    let k = cfg.k_beams.min(grid.with_anchor().len());
    let mut dist = beam_sample(item_id, scorer, k, &grid)?;
    let beams: Vec<f64> = dist.candidates.iter().map(|c| c.value).collect();
    let beam_keys: Vec<ValueKey> = beams.iter().map(|&v| ValueKey::of(v)).collect();
    for (value, text) in nice::required_points(truth, &beams, cfg)? {
        if beam_keys.contains(&ValueKey::of(value)) {
            continue;
        }
        let p = scorer.prob(value);
        if p > 0.0 {
            dist.candidates.push(CandidateScore {
                value,
                text,
                logprob: p.ln(),
                source: CandidateSource::GridQuery,
            });
        }
    }
    Ok(dist)
}
