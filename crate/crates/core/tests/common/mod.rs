#![allow(dead_code)]

pub mod corpus;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use factnice::ingest::{DatasetItem, ScoredDistribution};
use factnice::metrics::MraLadder;
use factnice::nice::{self, NiceConfig, ScoreTable};
use factnice::number::ValueKey;
use factnice::oracle::{self, CompositeScorer, SyntheticScorer};
use factnice::remote::ScoreRequest;
use factnice::seqprob::{self, FitCase, Temperature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const COHORT_SEED: u64 = 20_240_601;
pub const TS_GRID: [f64; 3] = [1.0, 1.5, 2.0];

pub fn item(id: &str, truth: f64) -> DatasetItem {
    DatasetItem {
        item_id: id.to_string(),
        question: format!("How far does object {id} travel?"),
        ground_truth: truth,
        unit: "m".to_string(),
        video_ref: format!("video/{id}.mp4"),
    }
}

/// Items whose scorer puts a sharp spike on the truth over a weak Gaussian
/// background: top-1 right, neighborhood starved.
pub fn spike_heavy_cohort(seed: u64, n: usize) -> Vec<(DatasetItem, ScoredDistribution)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NiceConfig::default();
    (0..n)
        .map(|i| {
            let truth = rng.random_range(4..=60) as f64 / 2.0;
            let spike = rng.random_range(0.55..0.85);
            let bg = rng.random_range(0.08..0.15);
            let sigma = rng.random_range(1.0..2.0);
            let scorer = CompositeScorer::new(vec![
                SyntheticScorer::Spike {
                    value: truth,
                    base_mass: spike,
                },
                SyntheticScorer::Gaussian {
                    mu: truth,
                    sigma,
                    base_mass: bg,
                },
            ])
            .unwrap();
            let id = format!("s{i:03}");
            let dist = oracle::simulate_item(&id, truth, &scorer, &cfg).unwrap();
            (item(&id, truth), dist)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhenomenonOutcome {
    pub n: usize,
    pub nicon_improved: usize,
    pub ts_temperature: f64,
    pub ts_improved: usize,
    pub tuned_temperature: f64,
    pub tuned_improved: usize,
}

fn truth_index(item: &DatasetItem, dist: &ScoredDistribution) -> usize {
    dist.candidates
        .iter()
        .position(|c| ValueKey::of(c.value) == ValueKey::of(item.ground_truth))
        .expect("cohort scores the truth")
}

fn scaled_nci(
    item: &DatasetItem,
    dist: &ScoredDistribution,
    t: Temperature,
    cfg: &NiceConfig,
) -> f64 {
    let probs: Vec<f64> = dist.candidates.iter().map(|c| c.probability()).collect();
    let scaled = seqprob::temperature_scale(&probs, t).unwrap();
    let table = ScoreTable::from_pairs(dist.candidates.iter().map(|c| c.value).zip(scaled));
    nice::nci(&table, item.ground_truth, cfg).unwrap()
}

/// Count items whose NCI moves strictly closer to 1 under Nicon and under
/// temperature scaling with T fitted by truth NLL over `TS_GRID`. Also the
/// best case for scaling: T chosen to minimise mean |NCI - 1| itself.
pub fn calibration_phenomenon(cohort: &[(DatasetItem, ScoredDistribution)]) -> PhenomenonOutcome {
    let cfg = NiceConfig::default();
    let ladder = MraLadder::default();
    let grid: Vec<Temperature> = TS_GRID
        .iter()
        .map(|&t| Temperature::new(t).unwrap())
        .collect();

    let mut nicon_improved = 0;
    let mut raw_nci = Vec::new();
    for (item, dist) in cohort {
        let row = nice::evaluate_calibrated(item, dist, &cfg, &ladder).unwrap();
        let raw = row.nci_raw.unwrap();
        raw_nci.push(raw);
        if let Some(cal) = row.nci_calibrated {
            if (cal - 1.0).abs() < (raw - 1.0).abs() {
                nicon_improved += 1;
            }
        }
    }

    let cases: Vec<FitCase> = cohort
        .iter()
        .map(|(item, dist)| FitCase {
            probs: dist.candidates.iter().map(|c| c.probability()).collect(),
            target: truth_index(item, dist),
        })
        .collect();
    let fit = seqprob::fit_temperature(&cases, &grid).unwrap();

    let improved_at = |t: Temperature| {
        cohort
            .iter()
            .zip(&raw_nci)
            .filter(|((item, dist), raw)| {
                (scaled_nci(item, dist, t, &cfg) - 1.0).abs() < (**raw - 1.0).abs()
            })
            .count()
    };
    let mean_gap = |t: Temperature| {
        cohort
            .iter()
            .map(|(item, dist)| (scaled_nci(item, dist, t, &cfg) - 1.0).abs())
            .sum::<f64>()
    };
    let tuned = grid
        .iter()
        .copied()
        .min_by(|a, b| mean_gap(*a).total_cmp(&mean_gap(*b)))
        .unwrap();

    PhenomenonOutcome {
        n: cohort.len(),
        nicon_improved,
        ts_temperature: fit.temperature.get(),
        ts_improved: improved_at(fit.temperature),
        tuned_temperature: tuned.get(),
        tuned_improved: improved_at(tuned),
    }
}

/// Serve `POST /score` on an ephemeral port, answering each request with
/// `respond`. Returns the base URL.
pub fn mock_adapter(respond: fn(&ScoreRequest) -> (u16, String)) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let (status, reply) = match serde_json::from_slice::<ScoreRequest>(&body) {
                Ok(req) => respond(&req),
                Err(e) => (400, format!("{{\"error\":{:?}}}", e.to_string())),
            };
            let head = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                reply.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    format!("http://{addr}")
}

/// Stub model: logprob `-0.1 · (1 + |value - 10|)` for every candidate.
pub fn stub_scores(req: &ScoreRequest) -> (u16, String) {
    let candidates: Vec<serde_json::Value> = req
        .candidates
        .iter()
        .map(|text| {
            let v: f64 = text.parse().unwrap();
            serde_json::json!({"text": text, "logprob": -0.1 * (1.0 + (v - 10.0).abs())})
        })
        .collect();
    (
        200,
        serde_json::json!({ "candidates": candidates }).to_string(),
    )
}
