//! Experiment specs and the sweep runner.
//!
//! A spec is a grid over (protocol, adversary, n, k, beta) with a number of
//! trials per cell. Every trial gets its own seed derived from the spec seed,
//! the cell and the trial index, so runs are reproducible and independent of
//! how many threads execute them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dr_core::model::{parse_ratio, ratio_to_f64, ratio_text};
use dr_core::rng::derive;
use dr_core::runner::{self, Extras};
use dr_core::{AdversaryId, CommMode, ProtocolId, Ratio, SimConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::expr::Expr;
use crate::report;

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

/// A rational written either as a JSON number or as text like `"3/8"`.
#[derive(Deserialize)]
#[serde(untagged)]
enum RatioLit {
    Num(serde_json::Number),
    Text(String),
}

impl RatioLit {
    fn text(&self) -> String {
        match self {
            RatioLit::Num(n) => n.to_string(),
            RatioLit::Text(s) => s.clone(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BoundList {
    Plain(Vec<String>),
    Named(BTreeMap<String, String>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(default)]
    name: Option<String>,
    protocol: OneOrMany<String>,
    #[serde(default)]
    adversary: Option<OneOrMany<String>>,
    n: OneOrMany<usize>,
    k: OneOrMany<usize>,
    #[serde(default)]
    beta: Option<OneOrMany<RatioLit>>,
    #[serde(default)]
    trials: Option<usize>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    mode: Option<CommMode>,
    #[serde(default)]
    constants: BTreeMap<String, RatioLit>,
    #[serde(default)]
    bounds: Option<BoundList>,
    #[serde(default)]
    round_cap: Option<u64>,
    #[serde(default)]
    event_cap: Option<u64>,
    #[serde(default)]
    record_events: bool,
    #[serde(default)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Bound {
    pub name: String,
    pub text: String,
    pub expr: Expr,
}

impl Bound {
    pub fn new(name: &str, text: &str) -> Result<Bound, HarnessError> {
        let expr = Expr::parse(text).map_err(|source| HarnessError::Bound {
            text: text.to_string(),
            source,
        })?;
        Ok(Bound {
            name: name.to_string(),
            text: text.to_string(),
            expr,
        })
    }
}

/// A validated experiment.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub name: String,
    pub protocols: Vec<ProtocolId>,
    pub adversaries: Vec<AdversaryId>,
    pub ns: Vec<usize>,
    pub ks: Vec<usize>,
    pub betas: Vec<Ratio>,
    pub trials: usize,
    pub seed: u64,
    pub mode: Option<CommMode>,
    pub constants: BTreeMap<String, Ratio>,
    pub bounds: Vec<Bound>,
    pub round_cap: Option<u64>,
    pub event_cap: Option<u64>,
    pub record_events: bool,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub protocol: ProtocolId,
    pub adversary: AdversaryId,
    pub n: usize,
    pub k: usize,
    pub beta: Ratio,
}

impl Cell {
    /// Stable text key; also used in file names.
    pub fn label(&self) -> String {
        format!(
            "{}_{}_n{}_k{}_b{}-{}",
            self.protocol,
            self.adversary,
            self.n,
            self.k,
            self.beta.numer(),
            self.beta.denom()
        )
    }

    fn sort_key(&self) -> (&'static str, usize, usize, Ratio, &'static str) {
        (self.protocol.as_str(), self.n, self.k, self.beta, self.adversary.as_str())
    }
}

fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl ExperimentSpec {
    /// Cells in report order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &protocol in &self.protocols {
            for &adversary in &self.adversaries {
                for &n in &self.ns {
                    for &k in &self.ks {
                        for &beta in &self.betas {
                            cells.push(Cell {
                                protocol,
                                adversary,
                                n,
                                k,
                                beta,
                            });
                        }
                    }
                }
            }
        }
        cells.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        cells.dedup();
        cells
    }

    pub fn cell_seed(&self, cell: &Cell) -> u64 {
        derive(self.seed, fnv1a(&cell.label()))
    }

    pub fn trial_seed(&self, cell: &Cell, trial: usize) -> u64 {
        derive(self.cell_seed(cell), trial as u64)
    }

    pub fn config(&self, cell: &Cell, seed: u64) -> SimConfig {
        let mut cfg = SimConfig::new(cell.protocol, cell.n, cell.k, cell.beta, seed).with_adversary(cell.adversary);
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        cfg.constants = self.constants.clone();
        cfg.round_cap = self.round_cap;
        cfg.event_cap = self.event_cap;
        cfg.record_events = self.record_events;
        cfg
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentSpec, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, path)
}

/// Parses and validates a spec; `path` only labels errors.
pub fn parse_config_str(text: &str, path: &Path) -> Result<ExperimentSpec, HarnessError> {
    let raw: RawSpec = serde_json::from_str(text).map_err(|source| HarnessError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let invalid = |key: &str, msg: String| HarnessError::Invalid {
        path: path.to_path_buf(),
        key: key.to_string(),
        msg,
    };

    let protocols = raw
        .protocol
        .into_vec()
        .iter()
        .map(|s| s.parse::<ProtocolId>().map_err(|e| invalid("protocol", e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let adversaries = match raw.adversary {
        None => vec![AdversaryId::None],
        Some(list) => list
            .into_vec()
            .iter()
            .map(|s| s.parse::<AdversaryId>().map_err(|e| invalid("adversary", e.to_string())))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let betas = match raw.beta {
        None => vec![Ratio::from_integer(0)],
        Some(list) => list
            .into_vec()
            .iter()
            .map(|b| parse_ratio(&b.text()).map_err(|e| invalid("beta", e.to_string())))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let mut constants = BTreeMap::new();
    for (name, value) in &raw.constants {
        let r = parse_ratio(&value.text()).map_err(|e| invalid(&format!("constants.{name}"), e.to_string()))?;
        constants.insert(name.clone(), r);
    }
    let bounds = match raw.bounds {
        None => Vec::new(),
        Some(BoundList::Plain(list)) => list.iter().map(|t| Bound::new(t, t)).collect::<Result<_, _>>()?,
        Some(BoundList::Named(map)) => map.iter().map(|(n, t)| Bound::new(n, t)).collect::<Result<_, _>>()?,
    };
    let trials = raw.trials.unwrap_or(1);
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1".into()));
    }
    let spec = ExperimentSpec {
        name: raw.name.unwrap_or_else(|| "experiment".into()),
        protocols,
        adversaries,
        ns: raw.n.into_vec(),
        ks: raw.k.into_vec(),
        betas,
        trials,
        seed: raw.seed,
        mode: raw.mode,
        constants,
        bounds,
        round_cap: raw.round_cap,
        event_cap: raw.event_cap,
        record_events: raw.record_events,
        out_dir: raw.out_dir,
    };
    for (key, empty) in [
        ("protocol", spec.protocols.is_empty()),
        ("adversary", spec.adversaries.is_empty()),
        ("n", spec.ns.is_empty()),
        ("k", spec.ks.is_empty()),
        ("beta", spec.betas.is_empty()),
    ] {
        if empty {
            return Err(invalid(key, "empty list".into()));
        }
    }
    for cell in spec.cells() {
        let cfg = spec.config(&cell, spec.seed);
        let key = |e: &dr_core::SimError| {
            let msg = e.to_string();
            let key = if msg.contains("beta") {
                "beta"
            } else if msg.contains("adversary") || msg.contains("Byzantine") {
                "adversary"
            } else {
                "cell"
            };
            invalid(key, format!("{}: {msg}", cell.label()))
        };
        cfg.validate().map_err(|e| key(&e))?;
        runner::fault_plan(&cfg).map_err(|e| key(&e))?;
    }
    Ok(spec)
}

/// Measures from one completed trial.
#[derive(Clone, Debug, Serialize)]
pub struct TrialData {
    pub q_max: u64,
    pub t: f64,
    pub m_total: u64,
    pub s_max: u64,
    pub correct: bool,
    pub extras: Extras,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub outcome: TrialOutcome,
    #[serde(skip)]
    pub events: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    Done(TrialData),
    Error(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Stat {
    pub min: f64,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        // Nearest-rank quantile.
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Stat {
            min: v[0],
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: rank(0.5),
            p90: rank(0.9),
            max: v[v.len() - 1],
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundResult {
    pub name: String,
    pub expr: String,
    pub ok: bool,
    /// Trials on which the bound failed or could not be evaluated.
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellSummary {
    pub protocol: ProtocolId,
    pub adversary: AdversaryId,
    pub n: usize,
    pub k: usize,
    #[serde(with = "ratio_text")]
    pub beta: Ratio,
    /// Trials that completed.
    pub trials: usize,
    pub errors: usize,
    pub error_messages: Vec<String>,
    pub q_max: Stat,
    pub t: Stat,
    pub m_total: Stat,
    pub s_max: Stat,
    pub correct_freq: f64,
    pub extras: BTreeMap<String, Stat>,
    pub bounds: Vec<BoundResult>,
    pub bounds_ok: bool,
}

impl CellSummary {
    pub fn q_max_max(&self) -> u64 {
        self.q_max.max as u64
    }

    pub fn s_max_max(&self) -> u64 {
        self.s_max.max as u64
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub summary: CellSummary,
    pub records: Vec<TrialRecord>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; 0 picks the machine default.
    pub jobs: usize,
    /// Where artifacts go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
}

fn run_trial(spec: &ExperimentSpec, cell: &Cell, trial: usize) -> TrialRecord {
    let seed = spec.trial_seed(cell, trial);
    let cfg = spec.config(cell, seed);
    let (outcome, events) = match runner::run(&cfg) {
        Ok(rep) => {
            let events = spec.record_events.then(|| rep.log.to_ndjson());
            let m = rep.metrics;
            let data = TrialData {
                q_max: m.q_max,
                t: m.t_f64(),
                m_total: m.m_total,
                s_max: m.s_max,
                correct: m.correct,
                extras: rep.extras,
            };
            (TrialOutcome::Done(data), events)
        }
        Err(e) => (TrialOutcome::Error(e.to_string()), None),
    };
    TrialRecord {
        trial,
        seed,
        outcome,
        events,
    }
}

fn lookup_param(cell: &Cell, spec: &ExperimentSpec, name: &str) -> Option<f64> {
    let beta = ratio_to_f64(cell.beta);
    let budget = SimConfig::new(cell.protocol, cell.n, cell.k, cell.beta, 0).budget();
    Some(match name {
        "n" => cell.n as f64,
        "k" => cell.k as f64,
        "beta" => beta,
        "gamma" => 1.0 - beta,
        "budget" => budget as f64,
        "trials" => spec.trials as f64,
        _ => return spec.constants.get(name).map(|r| ratio_to_f64(*r)),
    })
}

fn canonical(name: &str) -> &str {
    match name {
        "Q" | "Q_max" => "q_max",
        "T" => "t",
        "M" => "m_total",
        "S" => "s_max",
        _ => name,
    }
}

fn summarize(spec: &ExperimentSpec, cell: &Cell, records: &[TrialRecord]) -> CellSummary {
    let done: Vec<&TrialData> = records
        .iter()
        .filter_map(|r| match &r.outcome {
            TrialOutcome::Done(d) => Some(d),
            TrialOutcome::Error(_) => None,
        })
        .collect();
    let error_messages: Vec<String> = records
        .iter()
        .filter_map(|r| match &r.outcome {
            TrialOutcome::Error(e) => Some(format!("trial {}: {e}", r.trial)),
            TrialOutcome::Done(_) => None,
        })
        .collect();
    let stat = |f: &dyn Fn(&TrialData) -> f64| Stat::of(&done.iter().map(|d| f(d)).collect::<Vec<_>>());
    let q_max = stat(&|d| d.q_max as f64);
    let t = stat(&|d| d.t);
    let m_total = stat(&|d| d.m_total as f64);
    let s_max = stat(&|d| d.s_max as f64);
    let correct_freq = if done.is_empty() {
        0.0
    } else {
        done.iter().filter(|d| d.correct).count() as f64 / done.len() as f64
    };
    let mut names: Vec<&String> = done.iter().flat_map(|d| d.extras.keys()).collect();
    names.sort();
    names.dedup();
    let extras: BTreeMap<String, Stat> = names
        .into_iter()
        .map(|name| {
            let vals: Vec<f64> = done.iter().filter_map(|d| d.extras.get(name).copied()).collect();
            (name.clone(), Stat::of(&vals))
        })
        .collect();

    let aggregate = |name: &str| -> Option<f64> {
        Some(match name {
            "q_max_max" => q_max.max,
            "q_max_mean" => q_max.mean,
            "t_max" => t.max,
            "t_mean" => t.mean,
            "m_total_mean" => m_total.mean,
            "m_total_max" => m_total.max,
            "s_max_max" => s_max.max,
            "correct_freq" => correct_freq,
            "errors" => error_messages.len() as f64,
            "completed" => done.len() as f64,
            _ => return None,
        })
    };
    let budget = SimConfig::new(cell.protocol, cell.n, cell.k, cell.beta, 0).budget() as f64;
    let bounds: Vec<BoundResult> = spec
        .bounds
        .iter()
        .map(|b| {
            let mut failures = 0;
            let mut error = None;
            let mut check = |trial: Option<&TrialData>| {
                let lookup = |raw: &str| -> Option<f64> {
                    let name = canonical(raw);
                    if let Some(d) = trial {
                        let v = match name {
                            "q_max" => Some(d.q_max as f64),
                            "t" => Some(d.t),
                            "m_total" => Some(d.m_total as f64),
                            "s_max" => Some(d.s_max as f64),
                            "correct" => Some(if d.correct { 1.0 } else { 0.0 }),
                            _ => d.extras.get(name).copied(),
                        };
                        if v.is_some() {
                            return v;
                        }
                    }
                    if name == "f" {
                        return Some(budget);
                    }
                    aggregate(name).or_else(|| lookup_param(cell, spec, name))
                };
                match b.expr.eval(&lookup) {
                    Ok(v) if v != 0.0 && !v.is_nan() => {}
                    Ok(_) => failures += 1,
                    Err(e) => {
                        failures += 1;
                        error.get_or_insert_with(|| e.to_string());
                    }
                }
            };
            if done.is_empty() {
                check(None);
            } else {
                done.iter().for_each(|d| check(Some(d)));
            }
            BoundResult {
                name: b.name.clone(),
                expr: b.text.clone(),
                ok: failures == 0,
                failures,
                error,
            }
        })
        .collect();
    let bounds_ok = error_messages.is_empty() && !done.is_empty() && bounds.iter().all(|b| b.ok);
    CellSummary {
        protocol: cell.protocol,
        adversary: cell.adversary,
        n: cell.n,
        k: cell.k,
        beta: cell.beta,
        trials: done.len(),
        errors: error_messages.len(),
        error_messages,
        q_max,
        t,
        m_total,
        s_max,
        correct_freq,
        extras,
        bounds,
        bounds_ok,
    }
}

/// Runs every cell and trial, aggregates in (cell, trial) order and writes
/// artifacts to `opts.out_dir` (or the spec's `out_dir`) if set.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Vec<CellResult>, HarnessError> {
    let cells = spec.cells();
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let records: Vec<TrialRecord> =
        pool.install(|| tasks.par_iter().map(|&(c, t)| run_trial(spec, &cells[c], t)).collect());
    let mut it = records.into_iter();
    let results: Vec<CellResult> = cells
        .iter()
        .map(|cell| {
            let recs: Vec<TrialRecord> = it.by_ref().take(spec.trials).collect();
            CellResult {
                summary: summarize(spec, cell, &recs),
                records: recs,
            }
        })
        .collect();
    if let Some(dir) = opts.out_dir.as_ref().or(spec.out_dir.as_ref()) {
        report::write_artifacts(dir, spec, &results)?;
    }
    Ok(results)
}
