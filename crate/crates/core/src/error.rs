use thiserror::Error;

use crate::metrics::RunMetrics;

/// Everything that can stop a run or reject a configuration.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("query index {index} out of range 1..={n}")]
    QueryOutOfRange { index: usize, n: usize },

    #[error("scheduler violation: {0}")]
    Scheduler(String),

    #[error("delay {delay} outside (0, 1]")]
    DelayValidity { delay: String },

    #[error("no termination within {limit} {unit}")]
    NonTermination {
        limit: u64,
        unit: &'static str,
        partial: Box<RunMetrics>,
    },

    #[error("liveness violation: {0}")]
    Liveness(String),

    #[error("inconsistent candidate set: {0}")]
    Inconsistency(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("sifting error: {0}")]
    Sifting(String),
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        SimError::Invariant(msg.into())
    }
}
