//! Experiment harness: JSON experiment specs, seeded parallel sweeps,
//! per-cell aggregation, bound checks and CSV/JSON reports.

pub mod attack;
pub mod error;
pub mod expr;
pub mod harness;
pub mod report;

pub use error::HarnessError;
pub use harness::{parse_config, parse_config_str, run_experiment, CellSummary, ExperimentSpec, RunOptions};
