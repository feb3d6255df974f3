//! CSV rows, the text table and the artifact directory layout.
//!
//! ```text
//! <out>/results.csv        one row per cell
//! <out>/summary.json       full cell summaries with bound results
//! <out>/trials.ndjson      one line per trial
//! <out>/events/*.ndjson    event logs, when recorded
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::json;

use crate::error::HarnessError;
use crate::harness::{CellResult, CellSummary, ExperimentSpec};

pub const CSV_HEADER: [&str; 13] = [
    "protocol",
    "adversary",
    "n",
    "k",
    "beta",
    "trials",
    "q_max_max",
    "q_max_mean",
    "t_max",
    "m_total_mean",
    "s_max_max",
    "correct_freq",
    "bounds_ok",
];

/// Fixed formatting so equal runs give equal bytes.
pub fn num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.6}")
    }
}

fn row(s: &CellSummary) -> [String; 13] {
    [
        s.protocol.to_string(),
        s.adversary.to_string(),
        s.n.to_string(),
        s.k.to_string(),
        s.beta.to_string(),
        s.trials.to_string(),
        s.q_max_max().to_string(),
        num(s.q_max.mean),
        num(s.t.max),
        num(s.m_total.mean),
        s.s_max_max().to_string(),
        num(s.correct_freq),
        s.bounds_ok.to_string(),
    ]
}

/// Rows come out in (protocol, n, k, beta) order whatever the input order.
pub fn write_csv<W: Write>(summaries: &[CellSummary], out: W) -> Result<(), HarnessError> {
    let mut sorted: Vec<&CellSummary> = summaries.iter().collect();
    sorted.sort_by(|a, b| {
        (a.protocol.as_str(), a.n, a.k, a.beta, a.adversary.as_str())
            .cmp(&(b.protocol.as_str(), b.n, b.k, b.beta, b.adversary.as_str()))
    });
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for s in sorted {
        w.write_record(row(s))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn csv_string(summaries: &[CellSummary]) -> Result<String, HarnessError> {
    let mut buf = Vec::new();
    write_csv(summaries, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn table(summaries: &[CellSummary]) -> String {
    let mut rows = vec![CSV_HEADER.map(String::from)];
    rows.extend(summaries.iter().map(row));
    let widths: Vec<usize> = (0..CSV_HEADER.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    for s in summaries {
        let cell = format!("{}/{} n={} k={} beta={}", s.protocol, s.adversary, s.n, s.k, s.beta);
        for b in s.bounds.iter().filter(|b| !b.ok) {
            let _ = writeln!(
                out,
                "FAILED {cell}: {} `{}` on {} trial(s){}",
                b.name,
                b.expr,
                b.failures,
                b.error.as_ref().map(|e| format!(" ({e})")).unwrap_or_default()
            );
        }
        for e in s.error_messages.iter().take(3) {
            let _ = writeln!(out, "ERROR {cell}: {e}");
        }
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|source| HarnessError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_artifacts(dir: &Path, spec: &ExperimentSpec, results: &[CellResult]) -> Result<(), HarnessError> {
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|source| HarnessError::Write {
            path: p.to_path_buf(),
            source,
        })
    };
    mkdir(dir)?;
    let summaries: Vec<CellSummary> = results.iter().map(|r| r.summary.clone()).collect();
    write_file(&dir.join("results.csv"), csv_string(&summaries)?.as_bytes())?;

    let summary = json!({ "name": spec.name, "seed": spec.seed, "trials": spec.trials, "cells": summaries });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&dir.join("summary.json"), text.as_bytes())?;

    let mut lines = String::new();
    for r in results {
        let cell = &r.summary;
        for t in &r.records {
            let mut v = serde_json::to_value(t).expect("trial serializes");
            v["protocol"] = json!(cell.protocol);
            v["adversary"] = json!(cell.adversary);
            v["n"] = json!(cell.n);
            v["k"] = json!(cell.k);
            v["beta"] = json!(cell.beta.to_string());
            lines.push_str(&v.to_string());
            lines.push('\n');
        }
    }
    write_file(&dir.join("trials.ndjson"), lines.as_bytes())?;

    if results.iter().any(|r| r.records.iter().any(|t| t.events.is_some())) {
        let events = dir.join("events");
        mkdir(&events)?;
        for (cell, r) in spec.cells().iter().zip(results) {
            for t in &r.records {
                if let Some(log) = &t.events {
                    write_file(&events.join(format!("{}_t{}.ndjson", cell.label(), t.trial)), log.as_bytes())?;
                }
            }
        }
    }
    Ok(())
}
