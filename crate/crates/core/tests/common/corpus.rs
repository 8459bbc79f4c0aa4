use std::collections::BTreeSet;

use factnice::fact::ProbeKind;
use factnice::ingest::{
    self, CandidateScore, CandidateSource, CotContext, DatasetItem, GnaPrediction, IngestError,
    ProbeResponse, ScoredDistribution, TgTimestampPrediction, TokenRecord, Violation,
};
use factnice::number::format_fixed;
use factnice::seqprob::StepLogits;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const CORPUS: usize = 500;

pub fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x5eed)
}

pub fn nonzero(rng: &mut ChaCha8Rng) -> f64 {
    let v: f64 = rng.random_range(0.001..5000.0);
    if rng.random_bool(0.3) {
        -v
    } else {
        v
    }
}

pub fn text<T: Serialize>(records: &[T]) -> String {
    let mut out = Vec::new();
    ingest::write_jsonl(&mut out, records).unwrap();
    String::from_utf8(out).unwrap()
}

pub fn items(rng: &mut ChaCha8Rng) -> Vec<DatasetItem> {
    (0..CORPUS)
        .map(|i| DatasetItem {
            item_id: format!("item-{i}"),
            question: format!(
                "What is the speed in clip {}? \"quoted\" \u{00e9}",
                rng.random::<u32>()
            ),
            ground_truth: nonzero(rng),
            unit: ["m", "m/s", "s", "m/s²"][i % 4].to_string(),
            video_ref: format!("clips/{i}.mp4"),
        })
        .collect()
}

pub fn scores(rng: &mut ChaCha8Rng) -> Vec<ScoredDistribution> {
    (0..CORPUS)
        .map(|i| {
            let digits = rng.random_range(0..4);
            let n = rng.random_range(1..12);
            let start = rng.random_range(-5000..5000);
            let candidates = (0..n)
                .map(|k| {
                    let raw = (start + 3 * k) as f64 / 10f64.powi(digits as i32);
                    let text = format_fixed(raw, digits);
                    CandidateScore {
                        value: text.parse().unwrap(),
                        text,
                        logprob: -rng.random_range(0.0..40.0),
                        source: if rng.random_bool(0.5) {
                            CandidateSource::Beam
                        } else {
                            CandidateSource::GridQuery
                        },
                    }
                })
                .collect();
            ScoredDistribution {
                item_id: format!("item-{i}"),
                candidates,
            }
        })
        .collect()
}

pub fn gna(rng: &mut ChaCha8Rng) -> Vec<GnaPrediction> {
    (0..CORPUS)
        .map(|i| GnaPrediction {
            item_id: format!("item-{}", i / 5),
            predicted: nonzero(rng),
            context: CotContext::ALL[i % CotContext::ALL.len()],
            variant_id: if rng.random_bool(0.3) {
                format!("v{}", rng.random_range(0..4))
            } else {
                String::new()
            },
        })
        .collect()
}

pub fn subset(rng: &mut ChaCha8Rng, kind: ProbeKind, min: usize) -> BTreeSet<String> {
    let mut ids: Vec<String> = kind.universe().into_iter().collect();
    ids.shuffle(rng);
    let n = rng.random_range(min..=ids.len());
    ids.into_iter().take(n).collect()
}

pub fn probes(rng: &mut ChaCha8Rng) -> Vec<ProbeResponse> {
    (0..CORPUS)
        .map(|i| {
            let kind = ProbeKind::ALL[i % 3];
            let (selected, gold) = if kind == ProbeKind::TgEvent {
                (
                    subset(rng, kind, 1).into_iter().take(1).collect(),
                    subset(rng, kind, 1).into_iter().take(1).collect(),
                )
            } else {
                (subset(rng, kind, 0), subset(rng, kind, 1))
            };
            ProbeResponse {
                item_id: format!("item-{i}"),
                probe_kind: kind,
                selected,
                gold,
            }
        })
        .collect()
}

pub fn tg(rng: &mut ChaCha8Rng) -> Vec<TgTimestampPrediction> {
    (0..CORPUS)
        .map(|i| TgTimestampPrediction {
            item_id: format!("item-{i}"),
            predicted_ts: rng.random_range(0.0..120.0),
            gold_ts: rng.random_range(0.01..120.0),
        })
        .collect()
}

pub fn tokens(rng: &mut ChaCha8Rng) -> Vec<TokenRecord> {
    (0..CORPUS)
        .map(|i| {
            let steps = (0..rng.random_range(1..5))
                .map(|_| {
                    let width = rng.random_range(2..6);
                    let scores = (0..width).map(|_| rng.random_range(-20.0..20.0)).collect();
                    StepLogits::new(scores, rng.random_range(0..width)).unwrap()
                })
                .collect();
            TokenRecord {
                item_id: format!("item-{i}"),
                candidate_text: format!("{}.{}", i, i % 10),
                source: CandidateSource::GridQuery,
                steps,
            }
        })
        .collect()
}

/// Serialize and reparse 500 records of every kind.
pub fn round_trip_all(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    fn check<T: Serialize + PartialEq + std::fmt::Debug>(
        name: &str,
        records: Vec<T>,
        parse: impl Fn(&[u8]) -> Result<Vec<T>, IngestError>,
    ) -> Result<usize, String> {
        let body = text(&records);
        let back = parse(body.as_bytes()).map_err(|e| format!("{name}: {e}"))?;
        if back != records {
            return Err(format!("{name}: records differ after reparse"));
        }
        if text(&back) != body {
            return Err(format!("{name}: reserialization not byte-stable"));
        }
        Ok(records.len())
    }
    let mut n = check("items", items(rng), |b| ingest::parse_items(b))?;
    n += check("scores", scores(rng), |b| ingest::parse_scores(b))?;
    n += check("gna", gna(rng), |b| ingest::parse_gna(b))?;
    n += check("probes", probes(rng), |b| ingest::parse_probe_responses(b))?;
    n += check("tg", tg(rng), |b| ingest::parse_tg(b))?;
    n += check("tokens", tokens(rng), |b| ingest::parse_tokens(b))?;
    Ok(n)
}

fn splice(lines: &[String], at: usize, bad: &str) -> String {
    let mut out: Vec<&str> = lines.iter().map(String::as_str).collect();
    out.insert(at, bad);
    out.join("\n")
}

fn lines_of<T: Serialize>(records: &[T]) -> Vec<String> {
    records.iter().map(ingest::to_line).collect()
}

fn names_line(
    result: Result<(), IngestError>,
    line: usize,
    check: fn(&Violation) -> bool,
    bad: &str,
) -> Result<(), String> {
    let err = match result {
        Ok(()) => return Err(format!("accepted {bad}")),
        Err(e) => e,
    };
    if err.line() != Some(line) {
        return Err(format!("expected line {line}, got {err}"));
    }
    if !err.violation().is_some_and(check) {
        return Err(format!("wrong violation: {err}"));
    }
    if !err.to_string().contains(&format!("line {line}")) {
        return Err(format!("message lacks line number: {err}"));
    }
    Ok(())
}

type Case = (&'static str, fn(&Violation) -> bool);

/// Splice one bad record into 50 good ones for each kind and check the error
/// points at it. Returns the number of cases checked.
pub fn check_violations(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let it = lines_of(&items(rng)[..50]);
    let sc = lines_of(&scores(rng)[..50]);
    let gn = lines_of(&gna(rng)[..50]);
    let pr = lines_of(&probes(rng)[..50]);
    let t = lines_of(&tg(rng)[..50]);
    let tk = lines_of(&tokens(rng)[..50]);

    let item_cases: &[Case] = &[
        (
            r#"{"item_id":"","question":"q","ground_truth":1.0,"unit":"m","video_ref":"v"}"#,
            |v| *v == Violation::EmptyItemId,
        ),
        (
            r#"{"item_id":"z","question":"q","ground_truth":0.0,"unit":"m","video_ref":"v"}"#,
            |v| *v == Violation::ZeroGroundTruth,
        ),
        (
            r#"{"item_id":"item-3","question":"q","ground_truth":1.0,"unit":"m","video_ref":"v"}"#,
            |v| matches!(v, Violation::DuplicateItemId(_)),
        ),
        (r#"{"item_id":"z","question":"q""#, |v| {
            matches!(v, Violation::Json(_))
        }),
    ];
    let score_cases: &[Case] = &[
        (
            r#"{"item_id":"z","candidates":[{"value":1.0,"text":"1.0","logprob":0.3,"source":"BEAM"}]}"#,
            |v| *v == Violation::PositiveLogprob(0.3),
        ),
        (r#"{"item_id":"z","candidates":[]}"#, |v| {
            *v == Violation::NoCandidates
        }),
        (
            r#"{"item_id":"z","candidates":[{"value":1.0,"text":"1.5","logprob":-1.0,"source":"BEAM"}]}"#,
            |v| matches!(v, Violation::TextMismatch { .. }),
        ),
        (
            r#"{"item_id":"z","candidates":[{"value":1.0,"text":"1.0","logprob":-1.0,"source":"BEAM"},{"value":1.0,"text":"1.00","logprob":-2.0,"source":"GRID_QUERY"}]}"#,
            |v| matches!(v, Violation::DuplicateCandidate(_)),
        ),
    ];
    let gna_cases: &[Case] = &[(
        r#"{"item_id":"z","predicted":1.0,"context":"COT_XYZ"}"#,
        |v| matches!(v, Violation::Json(_)),
    )];
    let probe_cases: &[Case] = &[
        (
            r#"{"item_id":"z","probe_kind":"TG_EVENT","selected":["A"],"gold":["A","B"]}"#,
            |v| *v == Violation::TgGoldCardinality(2),
        ),
        (
            r#"{"item_id":"z","probe_kind":"VF","selected":["D9"],"gold":["D1"]}"#,
            |v| matches!(v, Violation::UnknownOption { .. }),
        ),
        (
            r#"{"item_id":"z","probe_kind":"PLC","selected":["C"],"gold":[]}"#,
            |v| *v == Violation::EmptyGold,
        ),
        (
            r#"{"item_id":"z","probe_kind":"PLC","selected":["C","C"],"gold":["C"]}"#,
            |v| matches!(v, Violation::DuplicateOption(_)),
        ),
    ];
    let tg_cases: &[Case] = &[
        (r#"{"item_id":"z","predicted_ts":1.0,"gold_ts":0.0}"#, |v| {
            *v == Violation::NonPositiveGoldTs
        }),
    ];
    let token_cases: &[Case] = &[(
        r#"{"item_id":"z","candidate_text":"1","steps":[{"scores":[1.0,2.0],"chosen_index":5}]}"#,
        |v| matches!(v, Violation::Steps(_) | Violation::Json(_)),
    )];

    let mut n = 0;
    let mut run = |lines: &[String],
                   cases: &[Case],
                   min_at: usize,
                   parse: &dyn Fn(&[u8]) -> Result<(), IngestError>| {
        for (bad, check) in cases {
            let at = rng.random_range(min_at..lines.len());
            names_line(
                parse(splice(lines, at, bad).as_bytes()),
                at + 1,
                *check,
                bad,
            )?;
            n += 1;
        }
        Ok::<(), String>(())
    };
    // duplicate id case needs item-3 above the splice point
    run(&it, item_cases, 10, &|b| ingest::parse_items(b).map(drop))?;
    run(&sc, score_cases, 0, &|b| ingest::parse_scores(b).map(drop))?;
    run(&gn, gna_cases, 0, &|b| ingest::parse_gna(b).map(drop))?;
    run(&pr, probe_cases, 0, &|b| {
        ingest::parse_probe_responses(b).map(drop)
    })?;
    run(&t, tg_cases, 0, &|b| ingest::parse_tg(b).map(drop))?;
    run(&tk, token_cases, 0, &|b| ingest::parse_tokens(b).map(drop))?;
    Ok(n)
}
