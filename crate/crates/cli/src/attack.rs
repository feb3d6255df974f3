//! The mirror attack against single-round protocols, driven from a config.

use std::fs;
use std::path::Path;

use dr_core::adversaries::mirror::QueryEverything;
use dr_core::adversaries::{mirror_attack, AttackReport, SkipOne};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    #[serde(default = "skip_one")]
    pub protocol: String,
    pub k: usize,
    pub n: usize,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn skip_one() -> String {
    "skip-one".into()
}

pub fn parse_attack(path: &Path) -> Result<AttackSpec, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn run_attack(spec: &AttackSpec) -> Result<AttackReport, HarnessError> {
    let report = match spec.protocol.as_str() {
        "skip-one" => mirror_attack(&SkipOne, spec.k, spec.n, spec.trials, spec.seed)?,
        "query-everything" => mirror_attack(&QueryEverything, spec.k, spec.n, spec.trials, spec.seed)?,
        other => {
            return Err(HarnessError::Invalid {
                path: "attack".into(),
                key: "protocol".into(),
                msg: format!("unknown single-round protocol `{other}`"),
            })
        }
    };
    Ok(report)
}

pub fn attack_csv(spec: &AttackSpec, r: &AttackReport) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "protocol",
        "k",
        "n",
        "trials",
        "target",
        "q_target",
        "failures_x0",
        "failures_x1",
        "failure_rate",
    ])?;
    w.write_record([
        spec.protocol.clone(),
        spec.k.to_string(),
        spec.n.to_string(),
        r.trials.to_string(),
        r.target.to_string(),
        crate::report::num(r.q_target),
        r.failures_x0.to_string(),
        r.failures_x1.to_string(),
        crate::report::num(r.failure_rate),
    ])?;
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
