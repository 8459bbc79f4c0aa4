//! Per-model diagnostic report: assembly, JSON and CSV emission, plot series.
//!
//! Every float leaves this module with exactly six fraction digits, and all
//! collections are ordered, so emitting the same report twice gives the same
//! bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use thiserror::Error;

use crate::fact::ProbeScorecard;
use crate::ingest::CotContext;
use crate::metrics::{self, MetricError, StdMode, Tier, TierPartition};
use crate::nice::{CalibrationStatus, NiceRow};

/// Version tag of the CoT context wording.
pub const TEMPLATE_VERSION: &str = "cot-context/v1";

pub const CSV_FILES: [(&str, &[&str]); 6] = [
    ("mra_by_context.csv", &["context", "mean_mra", "n_items"]),
    ("probe_f1.csv", &["probe_kind", "scope", "f1", "n_items"]),
    ("tiers.csv", &["tier", "n", "mean_top1_confidence"]),
    ("nice.csv", &["metric", "raw", "calibrated", "n_items"]),
    (
        "robustness.csv",
        &["context", "mean", "std", "n_variants", "mode"],
    ),
    ("cot_deltas.csv", &["context", "mean_delta", "n_common"]),
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("report JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextMra {
    pub context: CotContext,
    pub mean_mra: f64,
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotDeltaRow {
    pub context: CotContext,
    pub mean_delta: f64,
    pub n_common: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgGnaSummary {
    pub mean_mra: f64,
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbeSection {
    pub vf: Option<ProbeScorecard>,
    pub plc: Option<ProbeScorecard>,
    pub tg_mcq: Option<ProbeScorecard>,
    pub tg_gna: Option<TgGnaSummary>,
}

impl ProbeSection {
    pub fn is_empty(&self) -> bool {
        self.vf.is_none() && self.plc.is_none() && self.tg_mcq.is_none() && self.tg_gna.is_none()
    }

    pub fn scorecards(&self) -> impl Iterator<Item = &ProbeScorecard> {
        [&self.vf, &self.plc, &self.tg_mcq].into_iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub context: CotContext,
    pub mean: f64,
    pub std: f64,
    pub n_variants: usize,
    pub mode: StdMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierRow {
    pub tier: Tier,
    pub n: usize,
    pub mean_top1_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiceMetricRow {
    /// `NCI` or `NCE`.
    pub metric: String,
    pub raw: Option<f64>,
    pub calibrated: Option<f64>,
    pub n_items: usize,
    pub n_raw_defined: usize,
    pub n_calibrated_defined: usize,
}

/// Item counts behind the calibrated NICE means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NiceFlags {
    pub calibration_collapse: usize,
    pub too_few_beams: usize,
    pub mixed_mass: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub model_tag: String,
    pub template_version: String,
    pub probes: ProbeSection,
    pub mra_by_context: Vec<ContextMra>,
    pub cot_deltas: Vec<CotDeltaRow>,
    pub robustness: Vec<RobustnessRow>,
    pub tier_table: Vec<TierRow>,
    pub nice_table: Vec<NiceMetricRow>,
    pub nice_flags: NiceFlags,
}

impl DiagnosticReport {
    /// Fill every empty section of `self` from `other`. Sections already
    /// present in `self` are kept.
    pub fn merge(mut self, other: DiagnosticReport) -> Self {
        if self.model_tag.is_empty() {
            self.model_tag = other.model_tag;
        }
        if self.template_version.is_empty() {
            self.template_version = other.template_version;
        }
        let p = &mut self.probes;
        p.vf = p.vf.take().or(other.probes.vf);
        p.plc = p.plc.take().or(other.probes.plc);
        p.tg_mcq = p.tg_mcq.take().or(other.probes.tg_mcq);
        p.tg_gna = p.tg_gna.take().or(other.probes.tg_gna);
        if self.mra_by_context.is_empty() {
            self.mra_by_context = other.mra_by_context;
        }
        if self.cot_deltas.is_empty() {
            self.cot_deltas = other.cot_deltas;
        }
        if self.robustness.is_empty() {
            self.robustness = other.robustness;
        }
        if self.tier_table.is_empty() {
            self.tier_table = other.tier_table;
        }
        if self.nice_table.is_empty() {
            self.nice_table = other.nice_table;
            self.nice_flags = other.nice_flags;
        }
        self
    }

    /// The report as it reads back after JSON emission.
    pub fn quantized(&self) -> Self {
        let mut r = self.clone();
        for card in [&mut r.probes.vf, &mut r.probes.plc, &mut r.probes.tg_mcq]
            .into_iter()
            .flatten()
        {
            card.macro_f1 = q(card.macro_f1);
            card.mean_sample_f1 = q(card.mean_sample_f1);
            card.per_option_f1.values_mut().for_each(|v| *v = q(*v));
        }
        if let Some(tg) = &mut r.probes.tg_gna {
            tg.mean_mra = q(tg.mean_mra);
        }
        r.mra_by_context
            .iter_mut()
            .for_each(|m| m.mean_mra = q(m.mean_mra));
        r.cot_deltas
            .iter_mut()
            .for_each(|d| d.mean_delta = q(d.mean_delta));
        for row in &mut r.robustness {
            row.mean = q(row.mean);
            row.std = q(row.std);
        }
        for row in &mut r.tier_table {
            row.mean_top1_confidence = row.mean_top1_confidence.map(q);
        }
        for row in &mut r.nice_table {
            row.raw = row.raw.map(q);
            row.calibrated = row.calibrated.map(q);
        }
        r
    }
}

fn q(x: f64) -> f64 {
    fixed6(x).parse().unwrap_or(x)
}

fn fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s.trim_start_matches('-')
        .bytes()
        .all(|b| b == b'0' || b == b'.')
    {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn opt6(x: Option<f64>) -> String {
    x.map_or_else(|| "null".to_string(), fixed6)
}

fn mean(values: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ((n > 0).then(|| sum / n as f64), n)
}

/// Count and mean top-1 confidence per MRA tier. Always returns the three
/// tiers, with `None` means for empty ones.
pub fn tier_confidence_table(
    items: &[(f64, f64)],
    partition: &TierPartition,
) -> Result<Vec<TierRow>, MetricError> {
    let mut buckets: BTreeMap<Tier, Vec<f64>> =
        Tier::ALL.iter().map(|&t| (t, Vec::new())).collect();
    for &(mra, conf) in items {
        if !(0.0..=1.0).contains(&conf) {
            return Err(MetricError::OutOfUnitRange(conf));
        }
        let tier = metrics::tier_assign(mra, partition)?;
        buckets.entry(tier).or_default().push(conf);
    }
    Ok(buckets
        .into_iter()
        .map(|(tier, confs)| TierRow {
            tier,
            n: confs.len(),
            mean_top1_confidence: mean(confs.into_iter()).0,
        })
        .collect())
}

/// Mean raw and calibrated NCI/NCE over per-item rows, skipping undefined
/// values.
pub fn nice_table(rows: &[NiceRow]) -> (Vec<NiceMetricRow>, NiceFlags) {
    if rows.is_empty() {
        return (Vec::new(), NiceFlags::default());
    }
    let (nci_raw, n_nci_raw) = mean(rows.iter().filter_map(|r| r.nci_raw));
    let (nci_cal, n_nci_cal) = mean(rows.iter().filter_map(|r| r.nci_calibrated));
    let (nce_raw, n_nce_raw) = mean(rows.iter().map(|r| r.nce_raw));
    let (nce_cal, n_nce_cal) = mean(rows.iter().filter_map(|r| r.nce_calibrated));
    let count = |status| rows.iter().filter(|r| r.calibration == status).count();
    let flags = NiceFlags {
        calibration_collapse: count(CalibrationStatus::Collapse),
        too_few_beams: count(CalibrationStatus::TooFewBeams),
        mixed_mass: rows.iter().filter(|r| r.mixed_mass).count(),
    };
    let table = vec![
        NiceMetricRow {
            metric: "NCI".into(),
            raw: nci_raw,
            calibrated: nci_cal,
            n_items: rows.len(),
            n_raw_defined: n_nci_raw,
            n_calibrated_defined: n_nci_cal,
        },
        NiceMetricRow {
            metric: "NCE".into(),
            raw: nce_raw,
            calibrated: nce_cal,
            n_items: rows.len(),
            n_raw_defined: n_nce_raw,
            n_calibrated_defined: n_nce_cal,
        },
    ];
    (table, flags)
}

/// Pretty JSON with every float written at six fraction digits.
struct SixDigits<'a>(PrettyFormatter<'a>);

impl Formatter for SixDigits<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            writer.write_all(fixed6(value).as_bytes())
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Serialize any value with six-digit floats.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let mut out = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut out, SixDigits(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

pub fn from_json(text: &str) -> Result<DiagnosticReport, ReportError> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Json,
    CsvBundle,
}

/// Write `report` to `dest`: a single file for JSON, a directory of CSV
/// tables for the bundle.
pub fn emit(report: &DiagnosticReport, format: EmitFormat, dest: &Path) -> Result<(), ReportError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    match format {
        EmitFormat::Json => {
            let bytes = to_json_bytes(report)?;
            fs::write(dest, bytes).map_err(io_err(dest))
        }
        EmitFormat::CsvBundle => {
            fs::create_dir_all(dest).map_err(io_err(dest))?;
            for (name, rows) in csv_tables(report) {
                let path = dest.join(name);
                let csv_err = |source| ReportError::Csv {
                    path: path.clone(),
                    source,
                };
                let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
                for row in rows {
                    w.write_record(&row).map_err(csv_err)?;
                }
                w.flush().map_err(io_err(&path))?;
            }
            Ok(())
        }
    }
}

/// Each CSV table as rows of cells, header first.
pub fn csv_tables(report: &DiagnosticReport) -> Vec<(&'static str, Vec<Vec<String>>)> {
    let header = |i: usize| {
        CSV_FILES[i]
            .1
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
    };

    let mut mra = vec![header(0)];
    for m in &report.mra_by_context {
        mra.push(vec![
            m.context.as_str().into(),
            fixed6(m.mean_mra),
            m.n_items.to_string(),
        ]);
    }

    let mut f1 = vec![header(1)];
    for card in report.probes.scorecards() {
        let kind = card.probe_kind.as_str();
        for (option, v) in &card.per_option_f1 {
            f1.push(vec![
                kind.into(),
                option.clone(),
                fixed6(*v),
                card.n_items.to_string(),
            ]);
        }
        f1.push(vec![
            kind.into(),
            "macro".into(),
            fixed6(card.macro_f1),
            card.n_items.to_string(),
        ]);
    }

    let mut tiers = vec![header(2)];
    for t in &report.tier_table {
        tiers.push(vec![
            t.tier.as_str().into(),
            t.n.to_string(),
            opt6(t.mean_top1_confidence),
        ]);
    }

    let mut nice = vec![header(3)];
    for n in &report.nice_table {
        nice.push(vec![
            n.metric.clone(),
            opt6(n.raw),
            opt6(n.calibrated),
            n.n_items.to_string(),
        ]);
    }

    let mut robust = vec![header(4)];
    for r in &report.robustness {
        let mode = match r.mode {
            StdMode::Population => "POPULATION",
            StdMode::Sample => "SAMPLE",
        };
        robust.push(vec![
            r.context.as_str().into(),
            fixed6(r.mean),
            fixed6(r.std),
            r.n_variants.to_string(),
            mode.into(),
        ]);
    }

    let mut deltas = vec![header(5)];
    for d in &report.cot_deltas {
        deltas.push(vec![
            d.context.as_str().into(),
            fixed6(d.mean_delta),
            d.n_common.to_string(),
        ]);
    }

    vec![
        (CSV_FILES[0].0, mra),
        (CSV_FILES[1].0, f1),
        (CSV_FILES[2].0, tiers),
        (CSV_FILES[3].0, nice),
        (CSV_FILES[4].0, robust),
        (CSV_FILES[5].0, deltas),
    ]
}

/// One plot-ready series: row labels and named numeric columns of equal
/// length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub labels: Vec<String>,
    pub columns: BTreeMap<String, Vec<Option<f64>>>,
}

impl PlotSeries {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Probe F1 against zero-shot MRA, tier confidence bars, and raw vs
/// calibrated NICE bars. A series is present only when its table has rows.
pub fn plot_series(report: &DiagnosticReport) -> BTreeMap<String, PlotSeries> {
    let mut out = BTreeMap::new();

    let zero_shot = report
        .mra_by_context
        .iter()
        .find(|m| m.context == CotContext::ZeroShot)
        .map(|m| m.mean_mra);
    if let Some(mra) = zero_shot {
        let cards: Vec<&ProbeScorecard> = report.probes.scorecards().collect();
        if !cards.is_empty() {
            out.insert(
                "f1_vs_mra".to_string(),
                PlotSeries {
                    labels: cards
                        .iter()
                        .map(|c| c.probe_kind.as_str().to_string())
                        .collect(),
                    columns: BTreeMap::from([
                        (
                            "f1".to_string(),
                            cards.iter().map(|c| Some(c.macro_f1)).collect(),
                        ),
                        ("mra".to_string(), vec![Some(mra); cards.len()]),
                    ]),
                },
            );
        }
    }

    if !report.tier_table.is_empty() {
        out.insert(
            "tier_confidence".to_string(),
            PlotSeries {
                labels: report
                    .tier_table
                    .iter()
                    .map(|t| t.tier.as_str().to_string())
                    .collect(),
                columns: BTreeMap::from([
                    (
                        "mean_top1_confidence".to_string(),
                        report
                            .tier_table
                            .iter()
                            .map(|t| t.mean_top1_confidence)
                            .collect(),
                    ),
                    (
                        "n".to_string(),
                        report.tier_table.iter().map(|t| Some(t.n as f64)).collect(),
                    ),
                ]),
            },
        );
    }

    if !report.nice_table.is_empty() {
        out.insert(
            "nice_raw_vs_calibrated".to_string(),
            PlotSeries {
                labels: report.nice_table.iter().map(|n| n.metric.clone()).collect(),
                columns: BTreeMap::from([
                    (
                        "raw".to_string(),
                        report.nice_table.iter().map(|n| n.raw).collect(),
                    ),
                    (
                        "calibrated".to_string(),
                        report.nice_table.iter().map(|n| n.calibrated).collect(),
                    ),
                ]),
            },
        );
    }

    out
}
