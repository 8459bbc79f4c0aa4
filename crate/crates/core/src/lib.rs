//! Reasoning-fidelity probes and neighborhood-aware confidence metrics for
//! numeric answers of vision-language models.

pub mod cli;
pub mod fact;
pub mod ingest;
pub mod metrics;
pub mod nice;
pub mod number;
pub mod oracle;
pub mod remote;
pub mod report;
pub mod seqprob;
