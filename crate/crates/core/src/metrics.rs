//! Accuracy metrics: mean relative accuracy, option-level macro-F1, KL
//! divergence, accuracy tiers, prompt-variant robustness and CoT deltas.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fact::ProbeKind;
use crate::ingest::ProbeResponse;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("ground truth is zero; relative error is undefined")]
    ZeroTruth,
    #[error("{0} must be finite")]
    NonFinite(&'static str),
    #[error("MRA ladder needs {expected} strictly increasing thresholds in (0, 1)")]
    BadLadder { expected: usize },
    #[error("no responses to score")]
    NoResponses,
    #[error("responses mix probe kinds {0} and {1}")]
    MixedKinds(ProbeKind, ProbeKind),
    #[error("option {0:?} is outside the option universe")]
    OutsideUniverse(String),
    #[error("no option has labels or predictions")]
    NoScoreableOptions,
    #[error("distributions differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{0} is not a probability distribution")]
    NotADistribution(&'static str),
    #[error("KL divergence is infinite: h[{0}] > 0 where p[{0}] = 0")]
    InfiniteDivergence(usize),
    #[error("value {0} lies outside [0, 1]")]
    OutOfUnitRange(f64),
    #[error("sample standard deviation needs at least two variants")]
    SampleStdOfOne,
    #[error("no scores to aggregate")]
    NoScores,
    #[error("no item ids in common")]
    NoCommonItems,
}

/// Relative-error thresholds for MRA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MraLadder {
    thresholds: Vec<f64>,
    /// `1 - θ` per threshold, rounded to twelve decimals so `θ = 0.9` yields
    /// the float nearest to 0.1 rather than `0.09999999999999998`.
    tolerances: Vec<f64>,
}

impl MraLadder {
    pub const LEN: usize = 10;
    pub const DEFAULT_THRESHOLDS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

    pub fn new(thresholds: Vec<f64>) -> Result<Self, MetricError> {
        let increasing = thresholds.windows(2).all(|w| w[0] < w[1]);
        let in_range = thresholds.iter().all(|&t| t > 0.0 && t < 1.0);
        if thresholds.len() != Self::LEN || !increasing || !in_range {
            return Err(MetricError::BadLadder {
                expected: Self::LEN,
            });
        }
        let tolerances = thresholds
            .iter()
            .map(|t| ((1.0 - t) * 1e12).round() / 1e12)
            .collect();
        Ok(MraLadder {
            thresholds,
            tolerances,
        })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }
}

impl Default for MraLadder {
    fn default() -> Self {
        MraLadder::new(Self::DEFAULT_THRESHOLDS.to_vec()).expect("default ladder is valid")
    }
}

impl TryFrom<Vec<f64>> for MraLadder {
    type Error = MetricError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        MraLadder::new(v)
    }
}

impl From<MraLadder> for Vec<f64> {
    fn from(l: MraLadder) -> Vec<f64> {
        l.thresholds
    }
}

/// Fraction of ladder thresholds `θ` with `|ŷ - y| / |y| < 1 - θ`.
pub fn mra(predicted: f64, truth: f64, ladder: &MraLadder) -> Result<f64, MetricError> {
    if !predicted.is_finite() {
        return Err(MetricError::NonFinite("predicted"));
    }
    if !truth.is_finite() {
        return Err(MetricError::NonFinite("truth"));
    }
    if truth == 0.0 {
        return Err(MetricError::ZeroTruth);
    }
    let rel = (predicted - truth).abs() / truth.abs();
    let passed = ladder.tolerances.iter().filter(|&&tol| rel < tol).count();
    Ok(passed as f64 / ladder.tolerances.len() as f64)
}

/// How to score an option that is never labelled and never predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EmptyOptionPolicy {
    /// Count it as perfect agreement (F1 = 1).
    #[default]
    VacuousOne,
    /// Leave it out of the macro average.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub per_option: BTreeMap<String, f64>,
    pub mean_sample_f1: f64,
}

#[derive(Default, Clone, Copy)]
struct Confusion {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Confusion {
    fn f1(self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        (denom > 0).then(|| (2 * self.tp) as f64 / denom as f64)
    }
}

/// Option-level macro-F1 over multi-select responses of one probe kind.
///
/// Each option is a binary class: predicted-positive when selected,
/// label-positive when in the gold set.
pub fn macro_f1(
    responses: &[ProbeResponse],
    universe: &BTreeSet<String>,
    policy: EmptyOptionPolicy,
) -> Result<F1Report, MetricError> {
    let first = responses.first().ok_or(MetricError::NoResponses)?;
    let mut counts: BTreeMap<&str, Confusion> = universe
        .iter()
        .map(|o| (o.as_str(), Confusion::default()))
        .collect();
    let mut sample_total = 0.0;
    for r in responses {
        if r.probe_kind != first.probe_kind {
            return Err(MetricError::MixedKinds(first.probe_kind, r.probe_kind));
        }
        if let Some(o) = r
            .selected
            .iter()
            .chain(&r.gold)
            .find(|o| !universe.contains(*o))
        {
            return Err(MetricError::OutsideUniverse(o.clone()));
        }
        for (option, c) in counts.iter_mut() {
            match (r.selected.contains(*option), r.gold.contains(*option)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        sample_total += set_f1(&r.selected, &r.gold);
    }
    let mut per_option = BTreeMap::new();
    for (option, c) in counts {
        let score = match (c.f1(), policy) {
            (Some(f), _) => f,
            (None, EmptyOptionPolicy::VacuousOne) => 1.0,
            (None, EmptyOptionPolicy::Skip) => continue,
        };
        per_option.insert(option.to_string(), score);
    }
    if per_option.is_empty() {
        return Err(MetricError::NoScoreableOptions);
    }
    let macro_f1 = per_option.values().sum::<f64>() / per_option.len() as f64;
    Ok(F1Report {
        macro_f1,
        per_option,
        mean_sample_f1: sample_total / responses.len() as f64,
    })
}

/// Set-overlap F1 of one response; two empty sets agree perfectly.
pub fn set_f1(selected: &BTreeSet<String>, gold: &BTreeSet<String>) -> f64 {
    let denom = selected.len() + gold.len();
    if denom == 0 {
        return 1.0;
    }
    let overlap = selected.intersection(gold).count();
    (2 * overlap) as f64 / denom as f64
}

fn check_distribution(p: &[f64], name: &'static str) -> Result<(), MetricError> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(MetricError::NotADistribution(name));
    }
    if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(MetricError::NotADistribution(name));
    }
    Ok(())
}

/// `KL(h ‖ p)` in nats, with `0 · ln(0 / ·) = 0`.
pub fn kl_divergence(h: &[f64], p: &[f64]) -> Result<f64, MetricError> {
    if h.len() != p.len() {
        return Err(MetricError::LengthMismatch(h.len(), p.len()));
    }
    check_distribution(h, "h")?;
    check_distribution(p, "p")?;
    let mut total = 0.0;
    for (i, (&hi, &pi)) in h.iter().zip(p).enumerate() {
        if hi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Err(MetricError::InfiniteDivergence(i));
        }
        total += hi * (hi / pi).ln();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tier {
    Low,
    Mid,
    High,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Low, Tier::Mid, Tier::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Low => "LOW",
            Tier::Mid => "MID",
            Tier::High => "HIGH",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `LOW = [0, low_upper)`, `MID = [low_upper, mid_upper)`, `HIGH = [mid_upper, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierPartition {
    pub low_upper: f64,
    pub mid_upper: f64,
}

impl Default for TierPartition {
    fn default() -> Self {
        TierPartition {
            low_upper: 0.33,
            mid_upper: 0.66,
        }
    }
}

pub fn tier_assign(value: f64, partition: &TierPartition) -> Result<Tier, MetricError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(MetricError::OutOfUnitRange(value));
    }
    Ok(if value < partition.low_upper {
        Tier::Low
    } else if value < partition.mid_upper {
        Tier::Mid
    } else {
        Tier::High
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StdMode {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessStat {
    pub mean: f64,
    pub std: f64,
    pub n_variants: usize,
}

/// Mean and standard deviation of per-variant scores, folded in input order.
pub fn robustness(scores: &[f64], mode: StdMode) -> Result<RobustnessStat, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::NoScores);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite("score"));
    }
    let n = scores.len();
    let divisor = match mode {
        StdMode::Population => n as f64,
        StdMode::Sample if n < 2 => return Err(MetricError::SampleStdOfOne),
        StdMode::Sample => (n - 1) as f64,
    };
    let mean = scores.iter().sum::<f64>() / n as f64;
    let ss: f64 = scores.iter().map(|s| (s - mean).powi(2)).sum();
    Ok(RobustnessStat {
        mean,
        std: (ss / divisor).sqrt(),
        n_variants: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotDelta {
    pub mean_delta: f64,
    pub per_item: BTreeMap<String, f64>,
    pub n_common: usize,
}

/// Per-item `conditioned - zero_shot` on the shared item ids.
pub fn cot_delta(
    zero_shot: &BTreeMap<String, f64>,
    conditioned: &BTreeMap<String, f64>,
) -> Result<CotDelta, MetricError> {
    let per_item: BTreeMap<String, f64> = conditioned
        .iter()
        .filter_map(|(id, c)| zero_shot.get(id).map(|z| (id.clone(), c - z)))
        .collect();
    if per_item.is_empty() {
        return Err(MetricError::NoCommonItems);
    }
    let mean_delta = per_item.values().sum::<f64>() / per_item.len() as f64;
    Ok(CotDelta {
        mean_delta,
        n_common: per_item.len(),
        per_item,
    })
}
