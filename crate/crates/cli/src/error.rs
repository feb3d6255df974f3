use std::path::PathBuf;

use dr_core::SimError;
use thiserror::Error;

use crate::expr::ExprError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed config: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: invalid `{key}`: {msg}")]
    Invalid { path: PathBuf, key: String, msg: String },
    #[error("bound `{text}`: {source}")]
    Bound {
        text: String,
        #[source]
        source: ExprError,
    },
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("thread pool: {0}")]
    Pool(String),
}
