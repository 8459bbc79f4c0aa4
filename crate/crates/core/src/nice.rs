//! Neighborhood-informed confidence metrics and calibration.
//!
//! A numeric answer sits in a neighborhood of values with nearly the same
//! physical meaning. The metrics here ask how a model spreads probability
//! over that neighborhood:
//!
//! - **NCI** compares the mean mass on a symmetric grid around the ground
//!   truth with the mass on the truth itself. 1 is the target; 0 means the
//!   model is blind to the neighborhood; large values mean the truth is
//!   starved relative to its neighbors.
//! - **NCE** averages grid masses weighted by a distance-decayed alignment
//!   weight `Ψ`, floored at `ζ`, so confident far-off mass is penalized.
//! - **Nicon** reweights beam candidates by `P^α · ρ^(1-α)`, where the local
//!   consistency `ρ` is the mean neighbor mass relative to the candidate's
//!   own, and renormalizes. Isolated spikes lose mass; supported values gain.
//!
//! Grids are `anchor ± k·step` for `k = 1..=half_count`, rendered through
//! [`crate::number`] so grid values match the answer strings that were
//! scored.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DatasetItem, ScoredDistribution};
use crate::metrics::{self, MraLadder};
use crate::number::{format_fixed, fraction_digits, snap, ValueKey};
use crate::seqprob;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NiceError {
    #[error("invalid NICE configuration: {0}")]
    Config(String),
    #[error("anchor {0} is not finite")]
    NonFiniteAnchor(f64),
    #[error("ground truth is zero")]
    ZeroTruth,
    #[error("ground-truth probability zero (NCI undefined)")]
    ZeroTruthProbability,
    #[error("anchor {0} has zero probability (local consistency undefined)")]
    ZeroAnchorProbability(f64),
    #[error("probability at {value} is {p}, expected a finite value >= 0")]
    InvalidProbability { value: f64, p: f64 },
    #[error("Nicon needs at least 2 beam candidates, got {0}")]
    TooFewBeams(usize),
    #[error("calibration collapse: every beam weight is zero")]
    CalibrationCollapse,
}

/// How candidate probabilities are read from a scored distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbabilityMode {
    /// `exp(logprob)` as scored.
    #[default]
    Raw,
    /// `exp(logprob)` renormalized over every scored candidate of the item.
    Renormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiceConfig {
    /// Neighborhood radius; must equal `half_count * step`.
    pub delta: f64,
    /// Grid interval.
    pub step: f64,
    /// Grid points on each side of the anchor.
    pub half_count: usize,
    /// Lower truncation of the alignment weight.
    pub zeta: f64,
    /// Smoothing term in the alignment-weight denominator.
    pub epsilon: f64,
    /// Trust weight on the raw probability in Nicon.
    pub alpha: f64,
    /// Divisor of the local consistency factor (the beam count).
    pub k_beams: usize,
    #[serde(default)]
    pub probability_mode: ProbabilityMode,
    /// Count the truth itself among the NCE points (ablation only).
    #[serde(default)]
    pub nce_include_truth: bool,
}

impl NiceConfig {
    pub const DEFAULT_DELTA: f64 = 2.5;
    pub const DEFAULT_STEP: f64 = 0.5;
    pub const DEFAULT_HALF_COUNT: usize = 5;
    pub const DEFAULT_ZETA: f64 = -1.0;
    pub const DEFAULT_EPSILON: f64 = 0.001;
    pub const DEFAULT_ALPHA: f64 = 0.5;
    pub const DEFAULT_K_BEAMS: usize = 10;

    /// Number of grid points around an anchor.
    pub fn t_points(&self) -> usize {
        2 * self.half_count
    }

    pub fn validate(&self) -> Result<(), NiceError> {
        let fail = |msg: String| Err(NiceError::Config(msg));
        if !(self.step.is_finite() && self.step > 0.0) {
            return fail(format!("step must be > 0, got {}", self.step));
        }
        if self.half_count == 0 {
            return fail("half_count must be >= 1".into());
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return fail(format!("delta must be > 0, got {}", self.delta));
        }
        let span = self.half_count as f64 * self.step;
        if (span - self.delta).abs() > 1e-9 * self.delta.max(1.0) {
            return fail(format!(
                "delta {} must equal half_count {} x step {}",
                self.delta, self.half_count, self.step
            ));
        }
        if !(-1.0..=0.0).contains(&self.zeta) {
            return fail(format!("zeta must lie in [-1, 0], got {}", self.zeta));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return fail(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.k_beams < 2 {
            return fail(format!("k_beams must be >= 2, got {}", self.k_beams));
        }
        Ok(())
    }
}

impl Default for NiceConfig {
    fn default() -> Self {
        NiceConfig {
            delta: Self::DEFAULT_DELTA,
            step: Self::DEFAULT_STEP,
            half_count: Self::DEFAULT_HALF_COUNT,
            zeta: Self::DEFAULT_ZETA,
            epsilon: Self::DEFAULT_EPSILON,
            alpha: Self::DEFAULT_ALPHA,
            k_beams: Self::DEFAULT_K_BEAMS,
            probability_mode: ProbabilityMode::Raw,
            nce_include_truth: false,
        }
    }
}

/// Symmetric probe points around an anchor, anchor excluded, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodGrid {
    anchor: f64,
    points: Vec<f64>,
    digits: usize,
}

impl NeighborhoodGrid {
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Fraction digits used to render grid values as answer strings.
    pub fn digits(&self) -> usize {
        self.digits
    }

    pub fn render(&self, value: f64) -> String {
        format_fixed(value, self.digits)
    }

    /// Grid points plus the anchor, ascending.
    pub fn with_anchor(&self) -> Vec<f64> {
        let mut all = self.points.clone();
        let at = all.partition_point(|&p| p < self.anchor);
        all.insert(at, self.anchor);
        all
    }
}

pub fn build_grid(anchor: f64, cfg: &NiceConfig) -> Result<NeighborhoodGrid, NiceError> {
    if !anchor.is_finite() {
        return Err(NiceError::NonFiniteAnchor(anchor));
    }
    let digits = fraction_digits(cfg.step).max(fraction_digits(anchor));
    let anchor = snap(anchor, digits);
    let half = cfg.half_count as i64;
    let points = (-half..=half)
        .filter(|&k| k != 0)
        .map(|k| snap(anchor + k as f64 * cfg.step, digits))
        .collect();
    Ok(NeighborhoodGrid {
        anchor,
        points,
        digits,
    })
}

/// Probability mass assigned to an answer value.
pub trait ProbabilitySource {
    fn prob(&self, value: f64) -> f64;
}

impl<F: Fn(f64) -> f64> ProbabilitySource for F {
    fn prob(&self, value: f64) -> f64 {
        self(value)
    }
}

fn checked_prob(p_of: &impl ProbabilitySource, value: f64) -> Result<f64, NiceError> {
    let p = p_of.prob(value);
    if p.is_finite() && p >= 0.0 {
        Ok(p)
    } else {
        Err(NiceError::InvalidProbability { value, p })
    }
}

/// Candidate masses of one item, keyed by value. Unscored values have zero
/// mass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    masses: BTreeMap<ValueKey, f64>,
}

impl ScoreTable {
    pub fn from_distribution(dist: &ScoredDistribution, mode: ProbabilityMode) -> Self {
        let mut masses: BTreeMap<ValueKey, f64> = dist
            .candidates
            .iter()
            .map(|c| (ValueKey::of(c.value), c.probability()))
            .collect();
        if mode == ProbabilityMode::Renormalized {
            let total: f64 = masses.values().sum();
            if total > 0.0 {
                masses.values_mut().for_each(|p| *p /= total);
            }
        }
        ScoreTable { masses }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        ScoreTable {
            masses: pairs
                .into_iter()
                .map(|(v, p)| (ValueKey::of(v), p))
                .collect(),
        }
    }

    /// Replace the masses of calibrated beam values, keeping every other
    /// value's raw mass.
    pub fn overlay(&self, calibrated: &CalibratedDistribution) -> Self {
        let mut masses = self.masses.clone();
        for e in &calibrated.entries {
            masses.insert(ValueKey::of(e.value), e.calibrated_p);
        }
        ScoreTable { masses }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.masses.contains_key(&ValueKey::of(value))
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }
}

impl ProbabilitySource for ScoreTable {
    fn prob(&self, value: f64) -> f64 {
        self.masses
            .get(&ValueKey::of(value))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Mean over `points` of `p(point) / p(anchor)`.
fn neighbor_ratio(
    p_of: &impl ProbabilitySource,
    points: &[f64],
    anchor_p: f64,
    divisor: usize,
) -> Result<f64, NiceError> {
    let mut total = 0.0;
    for &point in points {
        total += checked_prob(p_of, point)? / anchor_p;
    }
    Ok(total / divisor as f64)
}

/// Neighborhood confusion index at the ground truth.
pub fn nci(p_of: &impl ProbabilitySource, truth: f64, cfg: &NiceConfig) -> Result<f64, NiceError> {
    cfg.validate()?;
    let grid = build_grid(truth, cfg)?;
    let p_truth = checked_prob(p_of, grid.anchor)?;
    if p_truth == 0.0 {
        return Err(NiceError::ZeroTruthProbability);
    }
    neighbor_ratio(p_of, &grid.points, p_truth, cfg.t_points())
}

/// Physical alignment weight `max(ζ, 1 - |c - truth| / (|truth| + ε))`.
pub fn psi(candidate: f64, truth: f64, cfg: &NiceConfig) -> Result<f64, NiceError> {
    if truth == 0.0 {
        return Err(NiceError::ZeroTruth);
    }
    if !truth.is_finite() {
        return Err(NiceError::NonFiniteAnchor(truth));
    }
    let weight = 1.0 - (candidate - truth).abs() / (truth.abs() + cfg.epsilon);
    Ok(if weight < cfg.zeta { cfg.zeta } else { weight })
}

/// Neighborhood calibration error: mean of `p(c) · Ψ(c)` over the truth grid.
pub fn nce(p_of: &impl ProbabilitySource, truth: f64, cfg: &NiceConfig) -> Result<f64, NiceError> {
    cfg.validate()?;
    if truth == 0.0 {
        return Err(NiceError::ZeroTruth);
    }
    let grid = build_grid(truth, cfg)?;
    let points = if cfg.nce_include_truth {
        grid.with_anchor()
    } else {
        grid.points.clone()
    };
    let mut total = 0.0;
    for &c in &points {
        total += checked_prob(p_of, c)? * psi(c, grid.anchor, cfg)?;
    }
    Ok(total / points.len() as f64)
}

/// Local consistency factor `ρ`: summed neighbor mass over `K · p(anchor)`.
pub fn local_consistency(
    anchor: f64,
    p_of: &impl ProbabilitySource,
    cfg: &NiceConfig,
) -> Result<f64, NiceError> {
    cfg.validate()?;
    let grid = build_grid(anchor, cfg)?;
    let p_anchor = checked_prob(p_of, grid.anchor)?;
    if p_anchor == 0.0 {
        return Err(NiceError::ZeroAnchorProbability(grid.anchor));
    }
    neighbor_ratio(p_of, &grid.points, p_anchor, cfg.k_beams)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedEntry {
    pub value: f64,
    pub raw_p: f64,
    /// `None` when the raw mass is zero and `ρ` is undefined.
    pub rho: Option<f64>,
    pub calibrated_p: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibratedDistribution {
    pub entries: Vec<CalibratedEntry>,
}

impl CalibratedDistribution {
    pub fn argmax(&self) -> Option<&CalibratedEntry> {
        self.entries.iter().fold(None, |best, e| match best {
            Some(b) if b.calibrated_p >= e.calibrated_p => Some(b),
            _ => Some(e),
        })
    }
}

/// Nicon weight `P^α · ρ^(1-α)`. A zero raw mass, or an undefined `ρ`, gives
/// weight 0. At `α = 1` the weight is `P` itself.
pub fn nicon_weight(raw_p: f64, rho: Option<f64>, alpha: f64) -> f64 {
    match rho {
        _ if raw_p == 0.0 => 0.0,
        None => 0.0,
        Some(_) if alpha == 1.0 => raw_p,
        Some(rho) => raw_p.powf(alpha) * rho.powf(1.0 - alpha),
    }
}

/// Renormalize precomputed `(raw_p, ρ)` pairs into calibrated masses.
pub fn calibrate_weights(
    entries: &[(f64, Option<f64>)],
    alpha: f64,
) -> Result<Vec<f64>, NiceError> {
    let weights: Vec<f64> = entries
        .iter()
        .map(|&(p, rho)| nicon_weight(p, rho, alpha))
        .collect();
    match seqprob::normalize(&weights) {
        Ok(p) => Ok(p),
        Err(seqprob::SeqProbError::ZeroMass) => Err(NiceError::CalibrationCollapse),
        Err(e) => Err(NiceError::Config(e.to_string())),
    }
}

/// Neighborhood-informed calibration of the beam candidates in `beams`.
pub fn nicon(
    beams: &ScoredDistribution,
    p_of: &impl ProbabilitySource,
    cfg: &NiceConfig,
) -> Result<CalibratedDistribution, NiceError> {
    cfg.validate()?;
    let values: Vec<f64> = beams.beams().map(|c| c.value).collect();
    if values.len() < 2 {
        return Err(NiceError::TooFewBeams(values.len()));
    }
    let mut pairs = Vec::with_capacity(values.len());
    for &v in &values {
        let p = checked_prob(p_of, v)?;
        let rho = match local_consistency(v, p_of, cfg) {
            Ok(rho) => Some(rho),
            Err(NiceError::ZeroAnchorProbability(_)) => {
                log::warn!(
                    "item {}: beam {v} has zero probability and gets no calibrated mass",
                    beams.item_id
                );
                None
            }
            Err(e) => return Err(e),
        };
        pairs.push((p, rho));
    }
    let calibrated = calibrate_weights(&pairs, cfg.alpha)?;
    Ok(CalibratedDistribution {
        entries: values
            .into_iter()
            .zip(pairs)
            .zip(calibrated)
            .map(|((value, (raw_p, rho)), calibrated_p)| CalibratedEntry {
                value,
                raw_p,
                rho,
                calibrated_p,
            })
            .collect(),
    })
}

/// Every value whose mass the metrics and the calibration read: the truth,
/// its grid, and each beam's grid. Sorted and de-duplicated.
pub fn required_points(
    truth: f64,
    beams: &[f64],
    cfg: &NiceConfig,
) -> Result<Vec<(f64, String)>, NiceError> {
    let mut out: BTreeMap<ValueKey, (f64, String)> = BTreeMap::new();
    let mut add_grid = |anchor: f64| -> Result<(), NiceError> {
        let grid = build_grid(anchor, cfg)?;
        for v in grid.with_anchor() {
            out.entry(ValueKey::of(v))
                .or_insert_with(|| (v, grid.render(v)));
        }
        Ok(())
    };
    add_grid(truth)?;
    for &b in beams {
        add_grid(b)?;
    }
    Ok(out.into_values().collect())
}

/// Outcome of running Nicon on one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CalibrationStatus {
    NotRun,
    Ok,
    Collapse,
    TooFewBeams,
}

/// Per-item NICE results, one row of `nice.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiceRow {
    pub item_id: String,
    pub ground_truth: f64,
    pub top1_value: f64,
    pub top1_confidence: f64,
    pub mra_top1: f64,
    pub nci_raw: Option<f64>,
    pub nce_raw: f64,
    pub nci_calibrated: Option<f64>,
    pub nce_calibrated: Option<f64>,
    pub calibration: CalibrationStatus,
    /// True when some truth-grid point is not a beam, so the calibrated
    /// metrics mix calibrated and raw masses.
    pub mixed_mass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<CalibratedDistribution>,
}

fn undefined_as_none(r: Result<f64, NiceError>) -> Result<Option<f64>, NiceError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(NiceError::ZeroTruthProbability) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Raw NCI/NCE for one item, plus the top-1 candidate's confidence and MRA.
pub fn evaluate_raw(
    item: &DatasetItem,
    dist: &ScoredDistribution,
    cfg: &NiceConfig,
    ladder: &MraLadder,
) -> Result<NiceRow, NiceError> {
    cfg.validate()?;
    let table = ScoreTable::from_distribution(dist, cfg.probability_mode);
    let truth = item.ground_truth;
    let (top1_value, top1_confidence) = dist
        .candidates
        .iter()
        .map(|c| (c.value, table.prob(c.value)))
        .fold(None, |best: Option<(f64, f64)>, (v, p)| match best {
            Some((bv, bp)) if bp > p || (bp == p && bv <= v) => Some((bv, bp)),
            _ => Some((v, p)),
        })
        .ok_or(NiceError::TooFewBeams(0))?;
    let mra_top1 = metrics::mra(top1_value, truth, ladder).map_err(|_| NiceError::ZeroTruth)?;
    Ok(NiceRow {
        item_id: item.item_id.clone(),
        ground_truth: truth,
        top1_value,
        top1_confidence,
        mra_top1,
        nci_raw: undefined_as_none(nci(&table, truth, cfg))?,
        nce_raw: nce(&table, truth, cfg)?,
        nci_calibrated: None,
        nce_calibrated: None,
        calibration: CalibrationStatus::NotRun,
        mixed_mass: false,
        distribution: None,
    })
}

/// Raw metrics, Nicon, and the metrics recomputed on calibrated masses.
pub fn evaluate_calibrated(
    item: &DatasetItem,
    dist: &ScoredDistribution,
    cfg: &NiceConfig,
    ladder: &MraLadder,
) -> Result<NiceRow, NiceError> {
    let mut row = evaluate_raw(item, dist, cfg, ladder)?;
    let table = ScoreTable::from_distribution(dist, cfg.probability_mode);
    let calibrated = match nicon(dist, &table, cfg) {
        Ok(c) => c,
        Err(NiceError::CalibrationCollapse) => {
            row.calibration = CalibrationStatus::Collapse;
            return Ok(row);
        }
        Err(NiceError::TooFewBeams(_)) => {
            row.calibration = CalibrationStatus::TooFewBeams;
            return Ok(row);
        }
        Err(e) => return Err(e),
    };
    let overlaid = table.overlay(&calibrated);
    let truth = item.ground_truth;
    let grid = build_grid(truth, cfg)?;
    let beam_keys: Vec<ValueKey> = calibrated
        .entries
        .iter()
        .map(|e| ValueKey::of(e.value))
        .collect();
    row.mixed_mass = grid
        .with_anchor()
        .iter()
        .any(|v| !beam_keys.contains(&ValueKey::of(*v)));
    row.nci_calibrated = undefined_as_none(nci(&overlaid, truth, cfg))?;
    row.nce_calibrated = Some(nce(&overlaid, truth, cfg)?);
    row.calibration = CalibrationStatus::Ok;
    row.distribution = Some(calibrated);
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CandidateScore, CandidateSource};

    fn cfg() -> NiceConfig {
        NiceConfig::default()
    }

    fn cfg_half(half: usize) -> NiceConfig {
        NiceConfig {
            half_count: half,
            delta: half as f64 * 0.5,
            ..NiceConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid() {
        let c = cfg();
        c.validate().unwrap();
        assert_eq!(c.t_points(), 10);
    }

    #[test]
    fn inconsistent_config_rejected() {
        let c = NiceConfig {
            delta: 3.0,
            ..cfg()
        };
        assert!(c.validate().is_err());
        let c = NiceConfig {
            alpha: 1.5,
            ..cfg()
        };
        assert!(c.validate().is_err());
        let c = NiceConfig { zeta: 0.5, ..cfg() };
        assert!(c.validate().is_err());
        let c = NiceConfig {
            k_beams: 1,
            ..cfg()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn grid_around_ten() {
        let g = build_grid(10.0, &cfg()).unwrap();
        assert_eq!(
            g.points(),
            &[7.5, 8.0, 8.5, 9.0, 9.5, 10.5, 11.0, 11.5, 12.0, 12.5]
        );
    }

    #[test]
    fn grid_around_zero() {
        let g = build_grid(0.0, &cfg_half(1)).unwrap();
        assert_eq!(g.points(), &[-0.5, 0.5]);
    }

    #[test]
    fn grid_around_six_point_six() {
        let g = build_grid(6.6, &cfg()).unwrap();
        assert_eq!(
            g.points(),
            &[4.1, 4.6, 5.1, 5.6, 6.1, 7.1, 7.6, 8.1, 8.6, 9.1]
        );
        assert!(!g.points().contains(&6.6));
        assert_eq!(g.render(g.points()[0]), "4.1");
        assert_eq!(g.with_anchor().len(), 11);
        assert_eq!(g.with_anchor()[5], 6.6);
    }

    #[test]
    fn grid_rejects_non_finite_anchor() {
        assert!(build_grid(f64::NAN, &cfg()).is_err());
    }

    #[test]
    fn nci_uniform_is_one() {
        assert_eq!(nci(&|_: f64| 0.08, 10.0, &cfg()).unwrap(), 1.0);
    }

    #[test]
    fn nci_spike_is_zero() {
        let spike = |v: f64| {
            if ValueKey::of(v) == ValueKey::of(10.0) {
                0.9
            } else {
                0.0
            }
        };
        assert_eq!(nci(&spike, 10.0, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn nci_needs_truth_mass() {
        let none = |v: f64| if v == 10.0 { 0.0 } else { 0.1 };
        assert_eq!(
            nci(&none, 10.0, &cfg()),
            Err(NiceError::ZeroTruthProbability)
        );
    }

    #[test]
    fn nci_gaussian_by_direct_summation() {
        // Independent summation of exp(-d²/2) over d = ±0.5k, k = 1..5.
        let base = 0.4;
        let gauss = |v: f64| base * (-(v - 10.0).powi(2) / 2.0).exp();
        let mut expected = 0.0;
        for k in 1..=5 {
            let d = 0.5 * k as f64;
            expected += 2.0 * (-d * d / 2.0).exp();
        }
        expected /= 10.0;
        let got = nci(&gauss, 10.0, &cfg()).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!(got > 0.0 && got < 1.0);
    }

    #[test]
    fn psi_examples() {
        let c = cfg();
        assert_eq!(psi(10.0, 10.0, &c).unwrap(), 1.0);
        let w = psi(9.5, 10.0, &c).unwrap();
        assert!((w - (1.0 - 0.5 / 10.001)).abs() < 1e-15);
        assert!((w - 0.950005).abs() < 1e-6);
        assert_eq!(psi(3.5, 1.0, &c).unwrap(), -1.0);
        assert_eq!(psi(1.0, 0.0, &c), Err(NiceError::ZeroTruth));
    }

    #[test]
    fn nce_examples() {
        let c = cfg();
        assert_eq!(nce(&|_: f64| 0.0, 10.0, &c).unwrap(), 0.0);

        let on_grid = |v: f64| {
            if ValueKey::of(v) == ValueKey::of(10.0) {
                0.0
            } else {
                0.08
            }
        };
        let mut psi_sum = 0.0;
        for k in 1..=5 {
            psi_sum += 2.0 * (1.0 - 0.5 * k as f64 / 10.001);
        }
        assert!((psi_sum - 8.50015).abs() < 1e-5);
        let got = nce(&on_grid, 10.0, &c).unwrap();
        assert!((got - 0.08 * psi_sum / 10.0).abs() < 1e-12);
        assert!((got - 0.068001).abs() < 1e-6);

        let far = |v: f64| {
            if ValueKey::of(v) == ValueKey::of(3.5) {
                0.5
            } else {
                0.0
            }
        };
        assert!((nce(&far, 1.0, &c).unwrap() - (-0.05)).abs() < 1e-15);
    }

    #[test]
    fn nce_can_include_truth() {
        let c = NiceConfig {
            nce_include_truth: true,
            ..cfg()
        };
        let only_truth = |v: f64| {
            if ValueKey::of(v) == ValueKey::of(10.0) {
                0.55
            } else {
                0.0
            }
        };
        assert!((nce(&only_truth, 10.0, &c).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(nce(&only_truth, 10.0, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn local_consistency_examples() {
        let c = cfg();
        assert_eq!(local_consistency(5.0, &|_: f64| 0.2, &c).unwrap(), 1.0);
        let isolated = |v: f64| {
            if ValueKey::of(v) == ValueKey::of(5.0) {
                0.2
            } else {
                0.0
            }
        };
        assert_eq!(local_consistency(5.0, &isolated, &c).unwrap(), 0.0);
        // anchor 0.1, ten neighbors summing to 0.04
        let thin = |v: f64| {
            if ValueKey::of(v) == ValueKey::of(5.0) {
                0.1
            } else {
                0.004
            }
        };
        assert!((local_consistency(5.0, &thin, &c).unwrap() - 0.04).abs() < 1e-15);
        assert!(matches!(
            local_consistency(5.0, &|_: f64| 0.0, &c),
            Err(NiceError::ZeroAnchorProbability(_))
        ));
    }

    #[test]
    fn equal_geometric_means_split_evenly() {
        let p = calibrate_weights(&[(0.4, Some(1.0)), (0.1, Some(4.0))], 0.5).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weight_edge_cases() {
        assert_eq!(nicon_weight(0.3, Some(0.0), 0.5), 0.0);
        assert_eq!(nicon_weight(0.3, Some(0.0), 1.0), 0.3);
        assert_eq!(nicon_weight(0.0, Some(2.0), 0.5), 0.0);
        assert_eq!(nicon_weight(0.3, None, 0.5), 0.0);
        assert_eq!(
            calibrate_weights(&[(0.0, None), (0.2, Some(0.0))], 0.5),
            Err(NiceError::CalibrationCollapse)
        );
    }

    fn beam_dist(values: &[(f64, f64)]) -> ScoredDistribution {
        ScoredDistribution {
            item_id: "x".into(),
            candidates: values
                .iter()
                .map(|&(v, p)| CandidateScore {
                    value: v,
                    text: format_fixed(v, 1),
                    logprob: p.ln(),
                    source: CandidateSource::Beam,
                })
                .collect(),
        }
    }

    #[test]
    fn alpha_one_is_plain_normalization() {
        let dist = beam_dist(&[(9.5, 0.3), (10.0, 0.2), (12.0, 0.1)]);
        let table = ScoreTable::from_distribution(&dist, ProbabilityMode::Raw);
        let c = NiceConfig {
            alpha: 1.0,
            ..cfg()
        };
        let cal = nicon(&dist, &table, &c).unwrap();
        let raw: Vec<f64> = cal.entries.iter().map(|e| e.raw_p).collect();
        let expected = seqprob::normalize(&raw).unwrap();
        for (e, x) in cal.entries.iter().zip(expected) {
            assert_eq!(e.calibrated_p.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn shared_rho_preserves_ranking() {
        let dist = beam_dist(&[(9.5, 0.1), (10.0, 0.1), (20.0, 0.1)]);
        let table = ScoreTable::from_distribution(&dist, ProbabilityMode::Raw);
        let flat = |_: f64| 0.1;
        let cal = nicon(&dist, &flat, &cfg()).unwrap();
        for e in &cal.entries {
            assert_eq!(e.rho, Some(1.0));
            assert!((e.calibrated_p - 1.0 / 3.0).abs() < 1e-12);
        }
        // Table-backed: spike at 20 is isolated, 9.5/10 support each other.
        let cal = nicon(&dist, &table, &cfg()).unwrap();
        let isolated = cal.entries.iter().find(|e| e.value == 20.0).unwrap();
        assert_eq!(isolated.rho, Some(0.0));
        assert_eq!(isolated.calibrated_p, 0.0);
    }

    #[test]
    fn nicon_needs_two_beams() {
        let dist = beam_dist(&[(10.0, 0.5)]);
        let table = ScoreTable::from_distribution(&dist, ProbabilityMode::Raw);
        assert_eq!(nicon(&dist, &table, &cfg()), Err(NiceError::TooFewBeams(1)));
    }

    #[test]
    fn isolated_beams_collapse() {
        let dist = beam_dist(&[(10.0, 0.5), (20.0, 0.4)]);
        let table = ScoreTable::from_distribution(&dist, ProbabilityMode::Raw);
        assert_eq!(
            nicon(&dist, &table, &cfg()),
            Err(NiceError::CalibrationCollapse)
        );
    }

    #[test]
    fn required_points_cover_all_grids() {
        let pts = required_points(10.0, &[10.0, 10.5], &cfg()).unwrap();
        // 7.5..12.5 around 10 and 8.0..13.0 around 10.5
        assert_eq!(pts.len(), 12);
        assert_eq!(pts.first().unwrap().1, "7.5");
        assert_eq!(pts.last().unwrap().1, "13.0");
    }

    #[test]
    fn renormalized_mode_sums_to_one() {
        let dist = beam_dist(&[(9.5, 0.2), (10.0, 0.2)]);
        let t = ScoreTable::from_distribution(&dist, ProbabilityMode::Renormalized);
        assert_eq!(t.prob(9.5), 0.5);
        assert_eq!(t.prob(11.0), 0.0);
    }

    #[test]
    fn evaluate_item_rows() {
        let item = DatasetItem {
            item_id: "x".into(),
            question: String::new(),
            ground_truth: 10.0,
            unit: "m".into(),
            video_ref: String::new(),
        };
        let mut dist = beam_dist(&[(10.0, 0.4), (10.5, 0.2), (9.5, 0.2)]);
        dist.candidates.push(CandidateScore {
            value: 11.0,
            text: "11.0".into(),
            logprob: 0.05f64.ln(),
            source: CandidateSource::GridQuery,
        });
        let ladder = MraLadder::default();
        let raw = evaluate_raw(&item, &dist, &cfg(), &ladder).unwrap();
        assert_eq!(raw.top1_value, 10.0);
        assert!((raw.top1_confidence - 0.4).abs() < 1e-12);
        assert_eq!(raw.mra_top1, 1.0);
        assert_eq!(raw.calibration, CalibrationStatus::NotRun);
        let expected_nci = (0.2 + 0.2 + 0.05) / 0.4 / 10.0;
        assert!((raw.nci_raw.unwrap() - expected_nci).abs() < 1e-12);

        let cal = evaluate_calibrated(&item, &dist, &cfg(), &ladder).unwrap();
        assert_eq!(cal.calibration, CalibrationStatus::Ok);
        assert!(cal.mixed_mass);
        assert_eq!(cal.nci_raw, raw.nci_raw);
        let d = cal.distribution.unwrap();
        let total: f64 = d.entries.iter().map(|e| e.calibrated_p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
