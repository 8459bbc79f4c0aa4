//! Line-delimited JSON record schemas and their validating parsers.
//!
//! Every parser reads one JSON object per line, skips blank lines, ignores
//! unknown keys, and stops at the first offending line with an error that
//! carries its 1-based line number. Nothing is dropped silently.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fact::ProbeKind;
use crate::number::ValueKey;
use crate::seqprob::StepLogits;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed reading input: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {violation}")]
    Invalid { line: usize, violation: Violation },
}

impl IngestError {
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::Invalid { line, .. } => Some(*line),
            IngestError::Io(_) => None,
        }
    }

    pub fn violation(&self) -> Option<&Violation> {
        match self {
            IngestError::Invalid { violation, .. } => Some(violation),
            IngestError::Io(_) => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Violation {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("item_id is empty")]
    EmptyItemId,
    #[error("duplicate item_id {0:?}")]
    DuplicateItemId(String),
    #[error("{field} must be finite")]
    NonFinite { field: &'static str },
    #[error("ground_truth must be nonzero")]
    ZeroGroundTruth,
    #[error("no candidates")]
    NoCandidates,
    #[error("positive logprob {0}")]
    PositiveLogprob(f64),
    #[error("duplicate candidate value {0}")]
    DuplicateCandidate(String),
    #[error("candidate text {text:?} does not render value {value}")]
    TextMismatch { text: String, value: f64 },
    #[error("unknown option {option:?} for probe kind {kind}")]
    UnknownOption { option: String, kind: ProbeKind },
    #[error("option {0:?} listed twice")]
    DuplicateOption(String),
    #[error("gold set is empty")]
    EmptyGold,
    #[error("TG_EVENT gold set must hold exactly one option, got {0}")]
    TgGoldCardinality(usize),
    #[error("{field} must be >= 0")]
    Negative { field: &'static str },
    #[error("gold_ts must be > 0")]
    NonPositiveGoldTs,
    #[error("invalid step scores: {0}")]
    Steps(String),
}

/// One question of the evaluation corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub item_id: String,
    pub question: String,
    pub ground_truth: f64,
    pub unit: String,
    pub video_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CandidateSource {
    /// Produced by beam decoding.
    Beam,
    /// Scored on request at a neighborhood grid point.
    GridQuery,
}

/// A candidate answer string with its total sequence log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub value: f64,
    pub text: String,
    pub logprob: f64,
    pub source: CandidateSource,
}

impl CandidateScore {
    pub fn probability(&self) -> f64 {
        self.logprob.exp()
    }

    fn validate(&self) -> Result<(), Violation> {
        if !self.value.is_finite() {
            return Err(Violation::NonFinite { field: "value" });
        }
        if !self.logprob.is_finite() {
            return Err(Violation::NonFinite { field: "logprob" });
        }
        if self.logprob > 0.0 {
            return Err(Violation::PositiveLogprob(self.logprob));
        }
        match self.text.trim().parse::<f64>() {
            Ok(parsed) if ValueKey::of(parsed) == ValueKey::of(self.value) => Ok(()),
            _ => Err(Violation::TextMismatch {
                text: self.text.clone(),
                value: self.value,
            }),
        }
    }
}

/// All scored candidates of one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDistribution {
    pub item_id: String,
    pub candidates: Vec<CandidateScore>,
}

impl ScoredDistribution {
    pub fn validate(&self) -> Result<(), Violation> {
        check_item_id(&self.item_id)?;
        if self.candidates.is_empty() {
            return Err(Violation::NoCandidates);
        }
        let mut seen = HashSet::new();
        for c in &self.candidates {
            c.validate()?;
            if !seen.insert(ValueKey::of(c.value)) {
                return Err(Violation::DuplicateCandidate(c.text.clone()));
            }
        }
        Ok(())
    }

    pub fn beams(&self) -> impl Iterator<Item = &CandidateScore> {
        self.candidates
            .iter()
            .filter(|c| c.source == CandidateSource::Beam)
    }

    pub fn has_grid_queries(&self) -> bool {
        self.candidates
            .iter()
            .any(|c| c.source == CandidateSource::GridQuery)
    }
}

/// Prompting condition under which a numeric answer was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CotContext {
    ZeroShot,
    CotVf,
    CotPlc,
    CotVfPlc,
    CotGt,
}

impl CotContext {
    pub const ALL: [CotContext; 5] = [
        CotContext::ZeroShot,
        CotContext::CotVf,
        CotContext::CotPlc,
        CotContext::CotVfPlc,
        CotContext::CotGt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CotContext::ZeroShot => "ZERO_SHOT",
            CotContext::CotVf => "COT_VF",
            CotContext::CotPlc => "COT_PLC",
            CotContext::CotVfPlc => "COT_VF_PLC",
            CotContext::CotGt => "COT_GT",
        }
    }
}

impl fmt::Display for CotContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CotContext {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CotContext::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown context {s:?}"))
    }
}

/// A free-form numeric answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnaPrediction {
    pub item_id: String,
    pub predicted: f64,
    pub context: CotContext,
    /// Prompt-variant tag; empty for the canonical prompt.
    #[serde(default)]
    pub variant_id: String,
}

/// One multiple-choice probe answer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResponse {
    pub item_id: String,
    pub probe_kind: ProbeKind,
    pub selected: BTreeSet<String>,
    pub gold: BTreeSet<String>,
}

#[derive(Deserialize)]
struct RawProbeResponse {
    item_id: String,
    probe_kind: ProbeKind,
    selected: Vec<String>,
    gold: Vec<String>,
}

impl RawProbeResponse {
    fn into_response(self) -> Result<ProbeResponse, Violation> {
        check_item_id(&self.item_id)?;
        let kind = self.probe_kind;
        let to_set = |ids: Vec<String>| -> Result<BTreeSet<String>, Violation> {
            let mut set = BTreeSet::new();
            for id in ids {
                if kind.option(&id).is_none() {
                    return Err(Violation::UnknownOption { option: id, kind });
                }
                if !set.insert(id.clone()) {
                    return Err(Violation::DuplicateOption(id));
                }
            }
            Ok(set)
        };
        let selected = to_set(self.selected)?;
        let gold = to_set(self.gold)?;
        if gold.is_empty() {
            return Err(Violation::EmptyGold);
        }
        if kind == ProbeKind::TgEvent && gold.len() != 1 {
            return Err(Violation::TgGoldCardinality(gold.len()));
        }
        Ok(ProbeResponse {
            item_id: self.item_id,
            probe_kind: kind,
            selected,
            gold,
        })
    }
}

/// A predicted event timestamp, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgTimestampPrediction {
    pub item_id: String,
    pub predicted_ts: f64,
    pub gold_ts: f64,
}

/// Raw per-step scores of one candidate string, for rescoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub item_id: String,
    pub candidate_text: String,
    #[serde(default = "default_token_source")]
    pub source: CandidateSource,
    pub steps: Vec<StepLogits>,
}

fn default_token_source() -> CandidateSource {
    CandidateSource::GridQuery
}

fn check_item_id(id: &str) -> Result<(), Violation> {
    if id.is_empty() {
        Err(Violation::EmptyItemId)
    } else {
        Ok(())
    }
}

/// Read a JSONL stream, turning each line into a record through `accept`.
fn read_jsonl<R, Raw, T>(
    reader: R,
    mut accept: impl FnMut(Raw) -> Result<T, Violation>,
) -> Result<Vec<T>, IngestError>
where
    R: BufRead,
    Raw: DeserializeOwned,
{
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let invalid = |violation| IngestError::Invalid {
            line: lineno,
            violation,
        };
        let raw: Raw =
            serde_json::from_str(trimmed).map_err(|e| invalid(Violation::Json(e.to_string())))?;
        out.push(accept(raw).map_err(invalid)?);
    }
    Ok(out)
}

struct UniqueIds(HashSet<String>);

impl UniqueIds {
    fn new() -> Self {
        UniqueIds(HashSet::new())
    }

    fn claim(&mut self, id: &str) -> Result<(), Violation> {
        check_item_id(id)?;
        if self.0.insert(id.to_string()) {
            Ok(())
        } else {
            Err(Violation::DuplicateItemId(id.to_string()))
        }
    }
}

pub fn parse_items(reader: impl BufRead) -> Result<Vec<DatasetItem>, IngestError> {
    let mut ids = UniqueIds::new();
    read_jsonl(reader, |item: DatasetItem| {
        ids.claim(&item.item_id)?;
        if !item.ground_truth.is_finite() {
            return Err(Violation::NonFinite {
                field: "ground_truth",
            });
        }
        if item.ground_truth == 0.0 {
            return Err(Violation::ZeroGroundTruth);
        }
        Ok(item)
    })
}

pub fn parse_scores(reader: impl BufRead) -> Result<Vec<ScoredDistribution>, IngestError> {
    let mut ids = UniqueIds::new();
    read_jsonl(reader, |dist: ScoredDistribution| {
        dist.validate()?;
        ids.claim(&dist.item_id)?;
        Ok(dist)
    })
}

pub fn parse_gna(reader: impl BufRead) -> Result<Vec<GnaPrediction>, IngestError> {
    read_jsonl(reader, |p: GnaPrediction| {
        check_item_id(&p.item_id)?;
        if !p.predicted.is_finite() {
            return Err(Violation::NonFinite { field: "predicted" });
        }
        Ok(p)
    })
}

pub fn parse_probe_responses(reader: impl BufRead) -> Result<Vec<ProbeResponse>, IngestError> {
    read_jsonl(reader, RawProbeResponse::into_response)
}

pub fn parse_tg(reader: impl BufRead) -> Result<Vec<TgTimestampPrediction>, IngestError> {
    read_jsonl(reader, |p: TgTimestampPrediction| {
        check_item_id(&p.item_id)?;
        if !p.predicted_ts.is_finite() {
            return Err(Violation::NonFinite {
                field: "predicted_ts",
            });
        }
        if p.predicted_ts < 0.0 {
            return Err(Violation::Negative {
                field: "predicted_ts",
            });
        }
        if !(p.gold_ts.is_finite() && p.gold_ts > 0.0) {
            return Err(Violation::NonPositiveGoldTs);
        }
        Ok(p)
    })
}

pub fn parse_tokens(reader: impl BufRead) -> Result<Vec<TokenRecord>, IngestError> {
    read_jsonl(reader, |r: TokenRecord| {
        check_item_id(&r.item_id)?;
        crate::seqprob::sequence_logprob(&r.steps).map_err(|e| Violation::Steps(e.to_string()))?;
        Ok(r)
    })
}

/// 1-based line number of each record in a JSONL text, in parse order.
pub fn record_lines(text: &str) -> Vec<usize> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, _)| i + 1)
        .collect()
}

/// Serialize one record per line.
pub fn write_jsonl<T: Serialize>(mut writer: impl Write, records: &[T]) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Render a single record as its JSONL line, without the newline.
pub fn to_line<T: Serialize>(record: &T) -> String {
    serde_json::to_string(record).expect("records contain only serializable fields")
}
