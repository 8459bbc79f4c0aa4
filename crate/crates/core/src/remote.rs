//! Client for a live scoring service speaking `POST /score`.
//!
//! Used by `nice` and `calibrate` to fill in GRID_QUERY masses when a scores
//! file carries only beams.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CandidateScore, CandidateSource, DatasetItem, ScoredDistribution};
use crate::nice::{self, NiceConfig, NiceError};
use crate::number::ValueKey;

pub const ADAPTER_URL_ENV: &str = "FACTNICE_ADAPTER_URL";

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("invalid score request: {0}")]
    InvalidRequest(String),
    #[error("adapter request failed: {0}")]
    Transport(String),
    #[error("adapter answered HTTP {0}")]
    Status(u16),
    #[error("adapter response violates the protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Nice(#[from] NiceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub media_refs: Vec<String>,
    pub candidates: Vec<String>,
    pub temperature: f64,
}

impl ScoreRequest {
    pub fn validate(&self) -> Result<(), RemoteError> {
        if self.candidates.is_empty() {
            return Err(RemoteError::InvalidRequest("no candidates".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(RemoteError::InvalidRequest(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredText {
    pub text: String,
    pub logprob: f64,
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    candidates: Vec<ScoredText>,
}

pub struct RemoteScorer {
    base_url: String,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        RemoteScorer {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent: config.into(),
        }
    }

    /// Scorer for the URL in `FACTNICE_ADAPTER_URL`, if set and non-empty.
    pub fn from_env() -> Option<Self> {
        std::env::var(ADAPTER_URL_ENV)
            .ok()
            .filter(|u| !u.trim().is_empty())
            .map(|u| RemoteScorer::new(u.trim(), Duration::from_secs(120)))
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// One logprob per candidate, in request order.
    pub fn score(&self, request: &ScoreRequest) -> Result<Vec<ScoredText>, RemoteError> {
        request.validate()?;
        let url = format!("{}/score", self.base_url);
        let mut response = self
            .agent
            .post(&url)
            .send_json(request)
            .map_err(|e| match e {
                ureq::Error::StatusCode(code) => RemoteError::Status(code),
                other => RemoteError::Transport(other.to_string()),
            })?;
        let body: ScoreResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| RemoteError::Protocol(e.to_string()))?;
        if body.candidates.len() != request.candidates.len() {
            return Err(RemoteError::Protocol(format!(
                "sent {} candidates, got {} scores",
                request.candidates.len(),
                body.candidates.len()
            )));
        }
        for (sent, got) in request.candidates.iter().zip(&body.candidates) {
            if *sent != got.text {
                return Err(RemoteError::Protocol(format!(
                    "expected candidate {sent:?}, got {:?}",
                    got.text
                )));
            }
            if !(got.logprob.is_finite() && got.logprob <= 0.0) {
                return Err(RemoteError::Protocol(format!(
                    "logprob {} for {sent:?} is not a finite value <= 0",
                    got.logprob
                )));
            }
        }
        Ok(body.candidates)
    }
}

/// Score every value the NICE metrics read that `dist` lacks, and append
/// the results as GRID_QUERY rows. Returns the number of rows added.
pub fn fill_grid_queries(
    item: &DatasetItem,
    dist: &mut ScoredDistribution,
    scorer: &RemoteScorer,
    cfg: &NiceConfig,
) -> Result<usize, RemoteError> {
    let beams: Vec<f64> = dist.beams().map(|c| c.value).collect();
    let present: Vec<ValueKey> = dist
        .candidates
        .iter()
        .map(|c| ValueKey::of(c.value))
        .collect();
    let missing: Vec<(f64, String)> = nice::required_points(item.ground_truth, &beams, cfg)?
        .into_iter()
        .filter(|(v, _)| !present.contains(&ValueKey::of(*v)))
        .collect();
    if missing.is_empty() {
        return Ok(0);
    }
    let request = ScoreRequest {
        prompt: item.question.clone(),
        media_refs: if item.video_ref.is_empty() {
            Vec::new()
        } else {
            vec![item.video_ref.clone()]
        },
        candidates: missing.iter().map(|(_, text)| text.clone()).collect(),
        temperature: 1.0,
    };
    let scores = scorer.score(&request)?;
    for ((value, text), scored) in missing.into_iter().zip(scores) {
        dist.candidates.push(CandidateScore {
            value,
            text,
            logprob: scored.logprob,
            source: CandidateSource::GridQuery,
        });
    }
    Ok(request.candidates.len())
}
