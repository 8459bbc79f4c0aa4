//! `factnice` command line.
//!
//! Exit codes: 0 on success, 1 when an input file fails validation, 2 on a
//! usage error or an invalid configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::fact::{self, CotMode, ProbeKind};
use crate::ingest::{
    self, CotContext, DatasetItem, GnaPrediction, IngestError, ScoredDistribution,
};
use crate::metrics::{self, MraLadder, StdMode, TierPartition};
use crate::nice::{self, NiceConfig, NiceRow, ProbabilityMode};
use crate::number::ValueKey;
use crate::oracle::{self, CompositeScorer, SyntheticScorer};
use crate::remote::RemoteScorer;
use crate::report::{self, DiagnosticReport, EmitFormat, RobustnessRow, TEMPLATE_VERSION};
use crate::seqprob::{self, FitCase, Temperature};

#[derive(Debug, Parser)]
#[command(
    name = "factnice",
    version,
    about = "Reasoning-fidelity probes and neighborhood-aware confidence metrics for numeric answers"
)]
struct Cli {
    /// Worker threads for per-item work; output order never depends on it
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// MRA per CoT context, CoT deltas and prompt-variant robustness
    Mra(MraArgs),
    /// Score VF / PLC / TG probe responses
    Probes(ProbesArgs),
    /// Raw NCI and NCE per item
    Nice(NiceCmdArgs),
    /// Nicon calibration, with NCI and NCE before and after
    Calibrate(NiceCmdArgs),
    /// Temperature-scale token logits or scored candidates
    TempScale(TempScaleArgs),
    /// Write scores.jsonl from a synthetic scorer
    Simulate(SimulateArgs),
    /// Join partial outputs into report.json and the CSV bundle
    Report(ReportArgs),
    /// Mean MRA change of each CoT context against zero-shot
    CotDelta(CotDeltaArgs),
    /// Print the probe option catalog
    Catalog(OutArgs),
    /// Render CoT context blocks from probe answers
    Contexts(ContextsArgs),
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LadderArgs {
    /// Comma-separated MRA thresholds (default 0.1,0.2,...,0.9,0.95)
    #[arg(long)]
    ladder: Option<String>,
}

impl LadderArgs {
    fn ladder(&self) -> Result<MraLadder, Failure> {
        let Some(spec) = &self.ladder else {
            return Ok(MraLadder::default());
        };
        let thresholds = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::Usage(format!("--ladder: {e}")))?;
        MraLadder::new(thresholds).map_err(|e| Failure::Usage(format!("--ladder: {e}")))
    }
}

#[derive(Debug, Args)]
struct MraArgs {
    #[arg(long)]
    gna: PathBuf,
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "")]
    model_tag: String,
    /// Standard deviation over prompt variants
    #[arg(long, value_enum, default_value_t = StdModeArg::Population)]
    std_mode: StdModeArg,
    #[command(flatten)]
    ladder: LadderArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StdModeArg {
    Population,
    Sample,
}

#[derive(Debug, Args)]
struct ProbesArgs {
    /// probes.jsonl with VF, PLC and TG_EVENT responses
    #[arg(long)]
    probes: Option<PathBuf>,
    /// tg.jsonl with event timestamp predictions
    #[arg(long)]
    tg: Option<PathBuf>,
    /// items.jsonl; when given, every item_id must appear in it
    #[arg(long)]
    items: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "")]
    model_tag: String,
    #[command(flatten)]
    ladder: LadderArgs,
}

#[derive(Debug, Args)]
struct NiceFlags {
    /// Trust weight on the raw probability
    #[arg(long, default_value_t = NiceConfig::DEFAULT_ALPHA)]
    alpha: f64,
    /// Neighborhood radius; must equal half x step
    #[arg(long, default_value_t = NiceConfig::DEFAULT_DELTA)]
    delta: f64,
    /// Grid interval
    #[arg(long, default_value_t = NiceConfig::DEFAULT_STEP)]
    step: f64,
    /// Grid points on each side of the anchor
    #[arg(long, default_value_t = NiceConfig::DEFAULT_HALF_COUNT)]
    half: usize,
    /// Floor of the alignment weight, in [-1, 0]
    #[arg(long, default_value_t = NiceConfig::DEFAULT_ZETA, allow_negative_numbers = true)]
    zeta: f64,
    /// Smoothing term of the alignment weight
    #[arg(long, default_value_t = NiceConfig::DEFAULT_EPSILON)]
    eps: f64,
    /// Beam count, the divisor of the local consistency factor
    #[arg(long, default_value_t = NiceConfig::DEFAULT_K_BEAMS)]
    k: usize,
    /// How candidate probabilities are read
    #[arg(long, value_enum, default_value_t = ModeArg::Raw)]
    probability_mode: ModeArg,
    /// Count the truth itself among the NCE points
    #[arg(long)]
    nce_include_truth: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Raw,
    Renormalized,
}

impl NiceFlags {
    fn config(&self) -> Result<NiceConfig, Failure> {
        let cfg = NiceConfig {
            delta: self.delta,
            step: self.step,
            half_count: self.half,
            zeta: self.zeta,
            epsilon: self.eps,
            alpha: self.alpha,
            k_beams: self.k,
            probability_mode: match self.probability_mode {
                ModeArg::Raw => ProbabilityMode::Raw,
                ModeArg::Renormalized => ProbabilityMode::Renormalized,
            },
            nce_include_truth: self.nce_include_truth,
        };
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct NiceCmdArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    /// Output nice.jsonl (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    nice: NiceFlags,
    #[command(flatten)]
    ladder: LadderArgs,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["tokens", "scores"])))]
#[command(group(clap::ArgGroup::new("temp").required(true).args(["t", "fit"])))]
struct TempScaleArgs {
    /// tokens.jsonl with per-step logits
    #[arg(long)]
    tokens: Option<PathBuf>,
    /// scores.jsonl whose candidate masses are rescaled per item
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Temperature
    #[arg(long)]
    t: Option<f64>,
    /// Comma-separated temperatures; picks the one minimising the truth NLL
    #[arg(long, requires_all = ["items", "scores"])]
    fit: Option<String>,
    /// items.jsonl, needed by --fit
    #[arg(long)]
    items: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Spike,
    Gaussian,
    Uniform,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Offset of the scorer's mode from each item's ground truth
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu: f64,
    /// Gaussian width
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Mass at the scorer's mode
    #[arg(long, default_value_t = 0.5)]
    base: f64,
    /// Half-width of the uniform plateau
    #[arg(long, default_value_t = 1.0)]
    width: f64,
    /// Mass of an added Gaussian background at the mode (0 disables it)
    #[arg(long, default_value_t = 0.0)]
    bg_base: f64,
    /// Width of the Gaussian background
    #[arg(long, default_value_t = 1.5)]
    bg_sigma: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    nice: NiceFlags,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Partial report JSON from `mra` or `probes`; repeatable
    #[arg(long)]
    partial: Vec<PathBuf>,
    /// nice.jsonl from `nice`
    #[arg(long)]
    nice: Option<PathBuf>,
    /// nice.jsonl from `calibrate`; preferred over --nice
    #[arg(long)]
    calibrated: Option<PathBuf>,
    #[arg(long, default_value = "")]
    model_tag: String,
    #[arg(long)]
    out: PathBuf,
    /// Directory for the CSV bundle
    #[arg(long)]
    csv_dir: Option<PathBuf>,
    /// JSON file for plot-ready series
    #[arg(long)]
    series_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CotDeltaArgs {
    #[arg(long)]
    gna: PathBuf,
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    ladder: LadderArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CotModeArg {
    ModelAnswer,
    GroundTruth,
}

#[derive(Debug, Args)]
struct ContextsArgs {
    #[arg(long)]
    probes: PathBuf,
    #[arg(long, value_enum, default_value_t = CotModeArg::ModelAnswer)]
    mode: CotModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Invalid(String),
}

impl Failure {
    fn invalid(path: &Path, msg: impl Display) -> Self {
        Failure::Invalid(format!("{}: {msg}", path.display()))
    }

    fn at_line(path: &Path, line: usize, msg: impl Display) -> Self {
        Failure::Invalid(format!("{}:{line}: {msg}", path.display()))
    }
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if cli.workers == 0 {
        return Err(Failure::Usage("--workers must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    match cli.command {
        Command::Mra(a) => cmd_mra(a),
        Command::Probes(a) => cmd_probes(a),
        Command::Nice(a) => pool.install(|| cmd_nice(a, false)),
        Command::Calibrate(a) => pool.install(|| cmd_nice(a, true)),
        Command::TempScale(a) => cmd_temp_scale(a),
        Command::Simulate(a) => pool.install(|| cmd_simulate(a)),
        Command::Report(a) => cmd_report(a),
        Command::CotDelta(a) => cmd_cot_delta(a),
        Command::Catalog(a) => {
            write_output(a.out.as_deref(), &json_bytes(&fact::catalog_document())?)
        }
        Command::Contexts(a) => cmd_contexts(a),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::invalid(path, e))
}

/// Parse a JSONL file, returning records with their line numbers.
fn load<T>(
    path: &Path,
    parse: impl FnOnce(io::Cursor<String>) -> Result<Vec<T>, IngestError>,
) -> Result<Vec<(usize, T)>, Failure> {
    let text = read_text(path)?;
    let lines = ingest::record_lines(&text);
    let records = parse(io::Cursor::new(text)).map_err(|e| match e.line() {
        Some(line) => Failure::at_line(path, line, e),
        None => Failure::invalid(path, e),
    })?;
    Ok(lines.into_iter().zip(records).collect())
}

fn load_items(path: &Path) -> Result<BTreeMap<String, DatasetItem>, Failure> {
    Ok(load(path, ingest::parse_items)?
        .into_iter()
        .map(|(_, item)| (item.item_id.clone(), item))
        .collect())
}

fn check_known<'a>(
    items: &'a BTreeMap<String, DatasetItem>,
    path: &Path,
    line: usize,
    id: &str,
) -> Result<&'a DatasetItem, Failure> {
    items
        .get(id)
        .ok_or_else(|| Failure::at_line(path, line, format!("unknown item_id {id:?}")))
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| Failure::invalid(path, e)),
        None => io::stdout()
            .write_all(bytes)
            .map_err(|e| Failure::Invalid(format!("stdout: {e}"))),
    }
}

fn jsonl_bytes<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    ingest::write_jsonl(&mut out, records).expect("writing to memory cannot fail");
    out
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    report::to_json_bytes(value).map_err(|e| Failure::Invalid(e.to_string()))
}

type ContextTable = BTreeMap<CotContext, BTreeMap<String, f64>>;

/// Per-item MRA per context from canonical predictions, plus robustness rows
/// for contexts that carry prompt variants.
fn gna_tables(
    path: &Path,
    preds: &[(usize, GnaPrediction)],
    items: &BTreeMap<String, DatasetItem>,
    ladder: &MraLadder,
    std_mode: StdMode,
) -> Result<(ContextTable, Vec<RobustnessRow>), Failure> {
    let mut by_variant: BTreeMap<CotContext, BTreeMap<String, BTreeMap<String, f64>>> =
        BTreeMap::new();
    for (line, p) in preds {
        let item = check_known(items, path, *line, &p.item_id)?;
        let score = metrics::mra(p.predicted, item.ground_truth, ladder)
            .map_err(|e| Failure::at_line(path, *line, e))?;
        let slot = by_variant
            .entry(p.context)
            .or_default()
            .entry(p.variant_id.clone())
            .or_default();
        if slot.insert(p.item_id.clone(), score).is_some() {
            return Err(Failure::at_line(
                path,
                *line,
                format!(
                    "duplicate prediction for item {:?}, context {}, variant {:?}",
                    p.item_id, p.context, p.variant_id
                ),
            ));
        }
    }
    let mut table = ContextTable::new();
    let mut robustness = Vec::new();
    for (context, variants) in &by_variant {
        let canonical = match variants.get("") {
            Some(scores) => scores.clone(),
            None => {
                // No canonical prompt: average each item over its variants.
                let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
                for scores in variants.values() {
                    for (id, s) in scores {
                        let e = sums.entry(id.clone()).or_default();
                        e.0 += s;
                        e.1 += 1;
                    }
                }
                sums.into_iter()
                    .map(|(id, (s, n))| (id, s / n as f64))
                    .collect()
            }
        };
        table.insert(*context, canonical);
        if variants.keys().any(|v| !v.is_empty()) {
            let means: Vec<f64> = variants
                .values()
                .map(|s| s.values().sum::<f64>() / s.len() as f64)
                .collect();
            let stat = metrics::robustness(&means, std_mode)
                .map_err(|e| Failure::invalid(path, format!("context {context}: {e}")))?;
            robustness.push(RobustnessRow {
                context: *context,
                mean: stat.mean,
                std: stat.std,
                n_variants: stat.n_variants,
                mode: std_mode,
            });
        }
    }
    Ok((table, robustness))
}

fn cmd_mra(a: MraArgs) -> Result<(), Failure> {
    let ladder = a.ladder.ladder()?;
    let items = load_items(&a.items)?;
    let preds = load(&a.gna, ingest::parse_gna)?;
    let mode = match a.std_mode {
        StdModeArg::Population => StdMode::Population,
        StdModeArg::Sample => StdMode::Sample,
    };
    let (table, robustness) = gna_tables(&a.gna, &preds, &items, &ladder, mode)?;
    let mut report = fact::diagnostic_summary(&a.model_tag, None, None, None, None, &table)
        .map_err(|e| Failure::invalid(&a.gna, e))?;
    report.robustness = robustness;
    report::emit(&report, EmitFormat::Json, &a.out).map_err(|e| Failure::Invalid(e.to_string()))
}

fn cmd_cot_delta(a: CotDeltaArgs) -> Result<(), Failure> {
    #[derive(Serialize)]
    struct Row {
        context: CotContext,
        mean_delta: f64,
        n_common: usize,
        per_item: BTreeMap<String, f64>,
    }
    let ladder = a.ladder.ladder()?;
    let items = load_items(&a.items)?;
    let preds = load(&a.gna, ingest::parse_gna)?;
    let (table, _) = gna_tables(&a.gna, &preds, &items, &ladder, StdMode::Population)?;
    let zero = table
        .get(&CotContext::ZeroShot)
        .ok_or_else(|| Failure::invalid(&a.gna, "no ZERO_SHOT predictions"))?;
    let mut rows = Vec::new();
    for (context, scores) in &table {
        if *context == CotContext::ZeroShot {
            continue;
        }
        let d = metrics::cot_delta(zero, scores)
            .map_err(|e| Failure::invalid(&a.gna, format!("context {context}: {e}")))?;
        rows.push(Row {
            context: *context,
            mean_delta: d.mean_delta,
            n_common: d.n_common,
            per_item: d.per_item,
        });
    }
    write_output(a.out.as_deref(), &json_bytes(&rows)?)
}

fn cmd_probes(a: ProbesArgs) -> Result<(), Failure> {
    if a.probes.is_none() && a.tg.is_none() {
        return Err(Failure::Usage("give --probes, --tg or both".into()));
    }
    let ladder = a.ladder.ladder()?;
    let items = a.items.as_deref().map(load_items).transpose()?;
    let mut report = DiagnosticReport {
        model_tag: a.model_tag.clone(),
        template_version: TEMPLATE_VERSION.to_string(),
        ..DiagnosticReport::default()
    };
    if let Some(path) = &a.probes {
        let responses = load(path, ingest::parse_probe_responses)?;
        let mut by_kind: BTreeMap<ProbeKind, Vec<_>> = BTreeMap::new();
        for (line, r) in responses {
            if let Some(items) = &items {
                check_known(items, path, line, &r.item_id)?;
            }
            by_kind.entry(r.probe_kind).or_default().push(r);
        }
        for (kind, responses) in by_kind {
            let card = match kind {
                ProbeKind::Vf => fact::score_vf(&responses),
                ProbeKind::Plc => fact::score_plc(&responses),
                ProbeKind::TgEvent => fact::score_tg_mcq(&responses),
            }
            .map_err(|e| Failure::invalid(path, e))?;
            match kind {
                ProbeKind::Vf => report.probes.vf = Some(card),
                ProbeKind::Plc => report.probes.plc = Some(card),
                ProbeKind::TgEvent => report.probes.tg_mcq = Some(card),
            }
        }
    }
    if let Some(path) = &a.tg {
        let preds = load(path, ingest::parse_tg)?;
        if let Some(items) = &items {
            for (line, p) in &preds {
                check_known(items, path, *line, &p.item_id)?;
            }
        }
        let preds: Vec<_> = preds.into_iter().map(|(_, p)| p).collect();
        let score = fact::score_tg_gna(&preds, &ladder).map_err(|e| Failure::invalid(path, e))?;
        report.probes.tg_gna = Some(report::TgGnaSummary {
            mean_mra: score.mean_mra,
            n_items: score.per_item.len(),
        });
    }
    report::emit(&report, EmitFormat::Json, &a.out).map_err(|e| Failure::Invalid(e.to_string()))
}

/// Join scores with items, in item_id order.
fn joined_scores(
    items_path: &Path,
    scores_path: &Path,
) -> Result<Vec<(DatasetItem, ScoredDistribution)>, Failure> {
    let items = load_items(items_path)?;
    let scores = load(scores_path, ingest::parse_scores)?;
    let mut joined = Vec::with_capacity(scores.len());
    let mut seen = BTreeSet::new();
    for (line, dist) in scores {
        let item = check_known(&items, scores_path, line, &dist.item_id)?;
        seen.insert(dist.item_id.clone());
        joined.push((item.clone(), dist));
    }
    let unscored = items.len() - seen.len();
    if unscored > 0 {
        log::warn!("{unscored} items have no scored candidates and are skipped");
    }
    joined.sort_by(|a, b| a.0.item_id.cmp(&b.0.item_id));
    Ok(joined)
}

fn cmd_nice(a: NiceCmdArgs, calibrate: bool) -> Result<(), Failure> {
    let cfg = a.nice.config()?;
    let ladder = a.ladder.ladder()?;
    let mut joined = joined_scores(&a.items, &a.scores)?;
    if let Some(scorer) = RemoteScorer::from_env() {
        for (item, dist) in joined.iter_mut().filter(|(_, d)| !d.has_grid_queries()) {
            let added =
                crate::remote::fill_grid_queries(item, dist, &scorer, &cfg).map_err(|e| {
                    Failure::Invalid(format!(
                        "item {:?}: {} ({})",
                        item.item_id,
                        e,
                        scorer.base_url()
                    ))
                })?;
            log::info!("item {}: scored {added} grid points remotely", item.item_id);
        }
    }
    let rows: Vec<Result<NiceRow, Failure>> = joined
        .par_iter()
        .map(|(item, dist)| {
            let row = if calibrate {
                nice::evaluate_calibrated(item, dist, &cfg, &ladder)
            } else {
                nice::evaluate_raw(item, dist, &cfg, &ladder)
            };
            row.map_err(|e| Failure::invalid(&a.scores, format!("item {:?}: {e}", item.item_id)))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_output(a.out.as_deref(), &jsonl_bytes(&rows))
}

fn cmd_temp_scale(a: TempScaleArgs) -> Result<(), Failure> {
    let temperature = |t: f64| Temperature::new(t).map_err(|e| Failure::Usage(format!("{e}")));
    if let Some(path) = &a.tokens {
        let t = temperature(a.t.expect("--fit conflicts with --tokens"))?;
        #[derive(Serialize)]
        struct Scaled<'a> {
            item_id: &'a str,
            candidate_text: &'a str,
            source: ingest::CandidateSource,
            temperature: f64,
            logprob: f64,
        }
        let records = load(path, ingest::parse_tokens)?;
        let mut out = Vec::with_capacity(records.len());
        for (line, r) in &records {
            let logprob = seqprob::sequence_logprob_scaled(&r.steps, t)
                .map_err(|e| Failure::at_line(path, *line, e))?;
            out.push(Scaled {
                item_id: &r.item_id,
                candidate_text: &r.candidate_text,
                source: r.source,
                temperature: t.get(),
                logprob,
            });
        }
        return write_output(a.out.as_deref(), &jsonl_bytes(&out));
    }

    let scores_path = a.scores.as_deref().expect("clap requires tokens or scores");
    let t = match (&a.fit, a.t) {
        (Some(grid), _) => {
            let grid = grid
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Failure::Usage(format!("--fit: {e}")))
                        .and_then(temperature)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let items_path = a
                .items
                .as_deref()
                .expect("clap requires --items with --fit");
            let joined = joined_scores(items_path, scores_path)?;
            let mut cases = Vec::new();
            for (item, dist) in &joined {
                let target = dist
                    .candidates
                    .iter()
                    .position(|c| ValueKey::of(c.value) == ValueKey::of(item.ground_truth));
                match target {
                    Some(target) => cases.push(FitCase {
                        probs: dist.candidates.iter().map(|c| c.probability()).collect(),
                        target,
                    }),
                    None => log::warn!(
                        "item {}: ground truth not scored, left out of the fit",
                        item.item_id
                    ),
                }
            }
            let fit = seqprob::fit_temperature(&cases, &grid)
                .map_err(|e| Failure::invalid(scores_path, e))?;
            eprintln!(
                "fitted temperature {} (mean NLL {:.6} over {} items)",
                fit.temperature.get(),
                fit.mean_nll,
                cases.len()
            );
            fit.temperature
        }
        (None, Some(t)) => temperature(t)?,
        (None, None) => unreachable!("clap requires --t or --fit"),
    };

    let scores = load(scores_path, ingest::parse_scores)?;
    let mut out = Vec::with_capacity(scores.len());
    for (line, mut dist) in scores {
        let probs: Vec<f64> = dist.candidates.iter().map(|c| c.probability()).collect();
        let scaled = seqprob::temperature_scale(&probs, t)
            .map_err(|e| Failure::at_line(scores_path, line, e))?;
        let before = dist.candidates.len();
        dist.candidates = dist
            .candidates
            .into_iter()
            .zip(scaled)
            .filter(|(_, p)| *p > 0.0)
            .map(|(mut c, p)| {
                c.logprob = p.ln();
                c
            })
            .collect();
        if dist.candidates.len() < before {
            log::warn!(
                "item {}: {} candidates underflowed to zero mass",
                dist.item_id,
                before - dist.candidates.len()
            );
        }
        out.push(dist);
    }
    out.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    write_output(a.out.as_deref(), &jsonl_bytes(&out))
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let cfg = a.nice.config()?;
    let items = load_items(&a.items)?;
    let build = |truth: f64| -> Result<CompositeScorer, Failure> {
        let mode = truth + a.mu;
        let main = match a.model {
            ModelArg::Spike => SyntheticScorer::Spike {
                value: mode,
                base_mass: a.base,
            },
            ModelArg::Gaussian => SyntheticScorer::Gaussian {
                mu: mode,
                sigma: a.sigma,
                base_mass: a.base,
            },
            ModelArg::Uniform => SyntheticScorer::Uniform {
                lo: mode - a.width,
                hi: mode + a.width,
                base_mass: a.base,
            },
        };
        let mut parts = vec![main];
        if a.bg_base > 0.0 {
            parts.push(SyntheticScorer::Gaussian {
                mu: mode,
                sigma: a.bg_sigma,
                base_mass: a.bg_base,
            });
        }
        CompositeScorer::new(parts).map_err(|e| Failure::Usage(e.to_string()))
    };
    let items: Vec<&DatasetItem> = items.values().collect();
    let dists: Vec<Result<ScoredDistribution, Failure>> = items
        .par_iter()
        .map(|item| {
            let scorer = build(item.ground_truth)?;
            oracle::simulate_item(&item.item_id, item.ground_truth, &scorer, &cfg)
                .map_err(|e| Failure::invalid(&a.items, format!("item {:?}: {e}", item.item_id)))
        })
        .collect();
    let dists = dists.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_output(a.out.as_deref(), &jsonl_bytes(&dists))
}

fn load_nice_rows(path: &Path) -> Result<Vec<NiceRow>, Failure> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (line, raw) in ingest::record_lines(&text)
        .into_iter()
        .zip(text.lines().filter(|l| !l.trim().is_empty()))
    {
        let row: NiceRow =
            serde_json::from_str(raw).map_err(|e| Failure::at_line(path, line, e))?;
        rows.push(row);
    }
    rows.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    Ok(rows)
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let mut report = DiagnosticReport {
        model_tag: a.model_tag.clone(),
        template_version: TEMPLATE_VERSION.to_string(),
        ..DiagnosticReport::default()
    };
    for path in &a.partial {
        let partial =
            report::from_json(&read_text(path)?).map_err(|e| Failure::invalid(path, e))?;
        report = report.merge(partial);
    }
    let rows_path = a.calibrated.as_ref().or(a.nice.as_ref());
    if let Some(path) = rows_path {
        let rows = load_nice_rows(path)?;
        let pairs: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.mra_top1, r.top1_confidence))
            .collect();
        report.tier_table = report::tier_confidence_table(&pairs, &TierPartition::default())
            .map_err(|e| Failure::invalid(path, e))?;
        let (table, flags) = report::nice_table(&rows);
        report.nice_table = table;
        report.nice_flags = flags;
    }
    let emit_err = |e: report::ReportError| Failure::Invalid(e.to_string());
    report::emit(&report, EmitFormat::Json, &a.out).map_err(emit_err)?;
    if let Some(dir) = &a.csv_dir {
        report::emit(&report, EmitFormat::CsvBundle, dir).map_err(emit_err)?;
    }
    if let Some(path) = &a.series_out {
        write_output(Some(path), &json_bytes(&report::plot_series(&report))?)?;
    }
    Ok(())
}

fn cmd_contexts(a: ContextsArgs) -> Result<(), Failure> {
    #[derive(Serialize)]
    struct Block {
        item_id: String,
        probe_kind: ProbeKind,
        mode: CotMode,
        template_version: &'static str,
        text: String,
    }
    let mode = match a.mode {
        CotModeArg::ModelAnswer => CotMode::ModelAnswer,
        CotModeArg::GroundTruth => CotMode::GroundTruth,
    };
    let responses = load(&a.probes, ingest::parse_probe_responses)?;
    let mut blocks = Vec::new();
    for (line, r) in responses {
        if r.probe_kind == ProbeKind::TgEvent {
            continue;
        }
        let text =
            fact::build_cot_context(&r, mode).map_err(|e| Failure::at_line(&a.probes, line, e))?;
        blocks.push(Block {
            item_id: r.item_id,
            probe_kind: r.probe_kind,
            mode,
            template_version: TEMPLATE_VERSION,
            text,
        });
    }
    write_output(a.out.as_deref(), &jsonl_bytes(&blocks))
}
