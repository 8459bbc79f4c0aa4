//! Reasoning-fidelity probes: visual preconditions, physical-law selection
//! and temporal grounding.
//!
//! Each probe makes one precondition observable. Multi-select MCQ probes are
//! scored with option-level macro-F1; timestamp probes with MRA.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CotContext, ProbeResponse, TgTimestampPrediction};
use crate::metrics::{self, EmptyOptionPolicy, MetricError, MraLadder};
use crate::report::{
    ContextMra, CotDeltaRow, DiagnosticReport, ProbeSection, TgGnaSummary, TEMPLATE_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbeKind {
    Vf,
    Plc,
    TgEvent,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 3] = [ProbeKind::Vf, ProbeKind::Plc, ProbeKind::TgEvent];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Vf => "VF",
            ProbeKind::Plc => "PLC",
            ProbeKind::TgEvent => "TG_EVENT",
        }
    }

    pub fn options(self) -> &'static [ProbeOption] {
        match self {
            ProbeKind::Vf => VF_OPTIONS,
            ProbeKind::Plc => PLC_OPTIONS,
            ProbeKind::TgEvent => TG_OPTIONS,
        }
    }

    pub fn option(self, id: &str) -> Option<&'static ProbeOption> {
        self.options().iter().find(|o| o.id == id)
    }

    pub fn universe(self) -> BTreeSet<String> {
        self.options().iter().map(|o| o.id.to_string()).collect()
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProbeOption {
    pub id: &'static str,
    pub name: &'static str,
    pub description: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formula: Option<&'static str>,
}

/// The four kinematic descriptors a visual-fidelity probe asks about.
pub const VF_OPTIONS: &[ProbeOption] = &[
    ProbeOption {
        id: "D1",
        name: "In-depth information",
        description: "Depth cues such as camera-to-object distance must be established.",
        formula: None,
    },
    ProbeOption {
        id: "D2",
        name: "Multi-frame reasoning",
        description: "Object motion has to be tracked across several frames.",
        formula: None,
    },
    ProbeOption {
        id: "D3",
        name: "Event spotting",
        description: "The moment a physical event happens has to be located.",
        formula: None,
    },
    ProbeOption {
        id: "D4",
        name: "Scale reference",
        description: "A reference object or coordinate scale has to be found first.",
        formula: None,
    },
];

/// Kinematic formulas a physical-law probe asks the model to select.
pub const PLC_OPTIONS: &[ProbeOption] = &[
    ProbeOption {
        id: "C",
        name: "Average velocity",
        description: "Displacement over elapsed time.",
        formula: Some("v = Δx/Δt"),
    },
    ProbeOption {
        id: "D",
        name: "Uniformly accelerated displacement",
        description: "Displacement under constant acceleration from an initial velocity.",
        formula: Some("x = v₀t + ½at²"),
    },
    ProbeOption {
        id: "E",
        name: "Average acceleration",
        description: "Change in velocity over elapsed time.",
        formula: Some("a = Δv/Δt"),
    },
    ProbeOption {
        id: "F",
        name: "Displacement via average velocity",
        description: "Mean of initial and final velocity times elapsed time.",
        formula: Some("s = ½(v₀ + v)t"),
    },
    ProbeOption {
        id: "G",
        name: "Pixel-to-physical scaling",
        description: "Pixel measurements converted with a known reference size.",
        formula: Some("s = pixel_ratio × reference_size"),
    },
];

/// Four-way event MCQ slots; the event texts travel with each annotation.
pub const TG_OPTIONS: &[ProbeOption] = &[
    ProbeOption {
        id: "A",
        name: "Event A",
        description: "First listed event.",
        formula: None,
    },
    ProbeOption {
        id: "B",
        name: "Event B",
        description: "Second listed event.",
        formula: None,
    },
    ProbeOption {
        id: "C",
        name: "Event C",
        description: "Third listed event.",
        formula: None,
    },
    ProbeOption {
        id: "D",
        name: "Event D",
        description: "Fourth listed event.",
        formula: None,
    },
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactError {
    #[error("expected {expected} responses, found {found} for item {item_id:?}")]
    WrongKind {
        expected: ProbeKind,
        found: ProbeKind,
        item_id: String,
    },
    #[error("TG_EVENT response for item {item_id:?} must select exactly one option, got {got}")]
    TgSelection { item_id: String, got: usize },
    #[error("chain-of-thought contexts are only built for VF and PLC probes, got {0}")]
    NoCotForKind(ProbeKind),
    #[error("duplicate timestamp prediction for item {0:?}")]
    DuplicateItem(String),
    #[error("no timestamp predictions")]
    NoPredictions,
    #[error("invalid annotation for item {item_id:?}: {reason}")]
    Annotation { item_id: String, reason: String },
    #[error("gna contexts must include ZERO_SHOT")]
    MissingZeroShot,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Machine-readable catalog document listing every probe universe.
pub fn catalog_document() -> serde_json::Value {
    let mut doc = serde_json::Map::new();
    for kind in ProbeKind::ALL {
        doc.insert(
            kind.as_str().to_string(),
            serde_json::to_value(kind.options()).expect("catalog serializes"),
        );
    }
    serde_json::Value::Object(doc)
}

/// One event/timestamp annotation with its four-way MCQ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgAnnotation {
    pub item_id: String,
    pub event_text: String,
    pub gold_ts: f64,
    /// Event text per option id.
    pub mcq_options: BTreeMap<String, String>,
    pub gold_option: String,
}

impl TgAnnotation {
    pub fn validate(&self) -> Result<(), FactError> {
        let fail = |reason: &str| FactError::Annotation {
            item_id: self.item_id.clone(),
            reason: reason.to_string(),
        };
        if !(self.gold_ts.is_finite() && self.gold_ts > 0.0) {
            return Err(fail("gold_ts must be > 0"));
        }
        if self.mcq_options.len() != TG_OPTIONS.len() {
            return Err(fail("exactly four MCQ options are required"));
        }
        if let Some(bad) = self
            .mcq_options
            .keys()
            .find(|id| ProbeKind::TgEvent.option(id).is_none())
        {
            return Err(fail(&format!("unknown option id {bad:?}")));
        }
        if !self.mcq_options.contains_key(&self.gold_option) {
            return Err(fail("gold option is not one of the MCQ options"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeScorecard {
    pub probe_kind: ProbeKind,
    pub macro_f1: f64,
    pub per_option_f1: BTreeMap<String, f64>,
    /// Mean per-response set-F1, reported alongside the option-level macro.
    pub mean_sample_f1: f64,
    pub n_items: usize,
}

fn score_kind(kind: ProbeKind, responses: &[ProbeResponse]) -> Result<ProbeScorecard, FactError> {
    if let Some(r) = responses.iter().find(|r| r.probe_kind != kind) {
        return Err(FactError::WrongKind {
            expected: kind,
            found: r.probe_kind,
            item_id: r.item_id.clone(),
        });
    }
    let f1 = metrics::macro_f1(responses, &kind.universe(), EmptyOptionPolicy::Skip)?;
    Ok(ProbeScorecard {
        probe_kind: kind,
        macro_f1: f1.macro_f1,
        per_option_f1: f1.per_option,
        mean_sample_f1: f1.mean_sample_f1,
        n_items: responses.len(),
    })
}

/// Visual-fidelity probe scorecard over the four descriptors.
pub fn score_vf(responses: &[ProbeResponse]) -> Result<ProbeScorecard, FactError> {
    score_kind(ProbeKind::Vf, responses)
}

/// Physical-law probe scorecard over the five formulas.
pub fn score_plc(responses: &[ProbeResponse]) -> Result<ProbeScorecard, FactError> {
    score_kind(ProbeKind::Plc, responses)
}

/// Event MCQ scorecard; each response must pick exactly one option.
pub fn score_tg_mcq(responses: &[ProbeResponse]) -> Result<ProbeScorecard, FactError> {
    if let Some(r) = responses
        .iter()
        .find(|r| r.probe_kind == ProbeKind::TgEvent && r.selected.len() != 1)
    {
        return Err(FactError::TgSelection {
            item_id: r.item_id.clone(),
            got: r.selected.len(),
        });
    }
    score_kind(ProbeKind::TgEvent, responses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgGnaScore {
    pub mean_mra: f64,
    pub per_item: BTreeMap<String, f64>,
}

/// MRA of predicted event timestamps against the annotated ones.
pub fn score_tg_gna(
    preds: &[TgTimestampPrediction],
    ladder: &MraLadder,
) -> Result<TgGnaScore, FactError> {
    if preds.is_empty() {
        return Err(FactError::NoPredictions);
    }
    let mut per_item = BTreeMap::new();
    let mut total = 0.0;
    for p in preds {
        let score = metrics::mra(p.predicted_ts, p.gold_ts, ladder)?;
        if per_item.insert(p.item_id.clone(), score).is_some() {
            return Err(FactError::DuplicateItem(p.item_id.clone()));
        }
        total += score;
    }
    Ok(TgGnaScore {
        mean_mra: total / preds.len() as f64,
        per_item,
    })
}

/// Which option set feeds a chain-of-thought context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CotMode {
    ModelAnswer,
    GroundTruth,
}

/// Plain-text block describing the preconditions chosen in an MCQ probe, to
/// be prepended to a numeric-answer prompt.
pub fn build_cot_context(answer: &ProbeResponse, mode: CotMode) -> Result<String, FactError> {
    let heading = match answer.probe_kind {
        ProbeKind::Vf => "Visual preconditions",
        ProbeKind::Plc => "Physical laws",
        ProbeKind::TgEvent => return Err(FactError::NoCotForKind(ProbeKind::TgEvent)),
    };
    let (options, source) = match mode {
        CotMode::ModelAnswer => (&answer.selected, "model answer"),
        CotMode::GroundTruth => (&answer.gold, "ground truth"),
    };
    let mut text = format!(
        "[{} context, {}, {}]\n{}:\n",
        answer.probe_kind, source, TEMPLATE_VERSION, heading
    );
    if options.is_empty() {
        text.push_str("- No preconditions identified.\n");
        return Ok(text);
    }
    for id in options {
        // Ingest rejects unknown ids, so the lookup only misses on
        // hand-built responses; fall back to the bare id.
        match answer.probe_kind.option(id) {
            Some(opt) => {
                text.push_str(&format!("- {} {}: {}", opt.id, opt.name, opt.description));
                if let Some(formula) = opt.formula {
                    text.push_str(&format!(" ({formula})"));
                }
                text.push('\n');
            }
            None => text.push_str(&format!("- {id}\n")),
        }
    }
    Ok(text)
}

/// Join per-axis results into one report, with a delta row for every
/// conditioned context relative to zero-shot.
pub fn diagnostic_summary(
    model_tag: &str,
    vf: Option<ProbeScorecard>,
    plc: Option<ProbeScorecard>,
    tg_gna: Option<&TgGnaScore>,
    tg_mcq: Option<ProbeScorecard>,
    gna_by_context: &BTreeMap<CotContext, BTreeMap<String, f64>>,
) -> Result<DiagnosticReport, FactError> {
    let zero_shot = gna_by_context
        .get(&CotContext::ZeroShot)
        .ok_or(FactError::MissingZeroShot)?;
    let mut mra_by_context = Vec::new();
    let mut cot_deltas = Vec::new();
    for (&context, per_item) in gna_by_context {
        if per_item.is_empty() {
            continue;
        }
        let mean = per_item.values().sum::<f64>() / per_item.len() as f64;
        mra_by_context.push(ContextMra {
            context,
            mean_mra: mean,
            n_items: per_item.len(),
        });
        if context != CotContext::ZeroShot {
            let delta = metrics::cot_delta(zero_shot, per_item)?;
            cot_deltas.push(CotDeltaRow {
                context,
                mean_delta: delta.mean_delta,
                n_common: delta.n_common,
            });
        }
    }
    Ok(DiagnosticReport {
        model_tag: model_tag.to_string(),
        template_version: TEMPLATE_VERSION.to_string(),
        probes: ProbeSection {
            vf,
            plc,
            tg_mcq,
            tg_gna: tg_gna.map(|s| TgGnaSummary {
                mean_mra: s.mean_mra,
                n_items: s.per_item.len(),
            }),
        },
        mra_by_context,
        cot_deltas,
        ..DiagnosticReport::default()
    })
}
