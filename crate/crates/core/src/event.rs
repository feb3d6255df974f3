//! Optional per-run event log, exported as newline-delimited JSON.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::SimError;
use crate::metrics::Stamp;
use crate::model::{parse_ratio, PeerId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Query,
    Send,
    Deliver,
    Crash,
    Corrupt,
    Decide,
    /// Protocol statistics (blacklist sizes, FS sizes, view outcomes, ...).
    Stat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub at: Stamp,
    pub kind: EventKind,
    pub peer: u32,
    pub detail: Value,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    round: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    time: Option<String>,
    kind: EventKind,
    peer: u32,
    #[serde(default)]
    detail: Value,
}

impl Serialize for EventRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let (round, time) = match self.at {
            Stamp::Round(r) => (Some(r), None),
            Stamp::Time(t) => (None, Some(t.to_string())),
        };
        WireRecord {
            round,
            time,
            kind: self.kind,
            peer: self.peer,
            detail: self.detail.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EventRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = WireRecord::deserialize(d)?;
        let at = match (w.round, w.time) {
            (Some(r), None) => Stamp::Round(r),
            (None, Some(t)) => Stamp::Time(parse_ratio(&t).map_err(serde::de::Error::custom)?),
            _ => return Err(serde::de::Error::custom("record needs exactly one of round/time")),
        };
        Ok(EventRecord {
            at,
            kind: w.kind,
            peer: w.peer,
            detail: w.detail,
        })
    }
}

/// Append-only log. When disabled every push is a no-op.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    enabled: bool,
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new(enabled: bool) -> Self {
        EventLog {
            enabled,
            records: Vec::new(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn push(&mut self, at: Stamp, kind: EventKind, peer: PeerId, detail: Value) {
        if self.enabled {
            self.records.push(EventRecord {
                at,
                kind,
                peer: peer.get(),
                detail,
            });
        }
    }

    /// Like `push` but builds the detail lazily.
    pub fn push_with(&mut self, at: Stamp, kind: EventKind, peer: PeerId, detail: impl FnOnce() -> Value) {
        if self.enabled {
            self.push(at, kind, peer, detail());
        }
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("event records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse_ndjson(text: &str) -> Result<Vec<EventRecord>, SimError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| SimError::config(format!("event log line {}: {e}", i + 1)))
            })
            .collect()
    }
}

/// Facts recomputed from an event log.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LogAudit {
    pub records: usize,
    /// Query totals per peer, counting only queries made while honest.
    pub q_per_peer: BTreeMap<u32, u64>,
    /// Max over peers that are honest at the end of the log.
    pub q_max_honest: u64,
    pub max_corrupt_per_stamp: usize,
    pub crashed: BTreeSet<u32>,
    /// Peers with any event after their crash record.
    pub active_after_crash: BTreeSet<u32>,
    pub decided: BTreeSet<u32>,
}

/// Recomputes query totals, corruption sizes and crash permanence.
pub fn audit_records(records: &[EventRecord]) -> LogAudit {
    let mut a = LogAudit {
        records: records.len(),
        ..LogAudit::default()
    };
    let mut corrupt_by_stamp: BTreeMap<Stamp, BTreeSet<u32>> = BTreeMap::new();
    for r in records {
        if a.crashed.contains(&r.peer) && r.kind != EventKind::Corrupt {
            a.active_after_crash.insert(r.peer);
        }
        match r.kind {
            EventKind::Query => {
                let count = r.detail.get("count").and_then(Value::as_u64).unwrap_or(1);
                *a.q_per_peer.entry(r.peer).or_default() += count;
            }
            EventKind::Crash => {
                a.crashed.insert(r.peer);
            }
            EventKind::Corrupt => {
                corrupt_by_stamp.entry(r.at).or_default().insert(r.peer);
            }
            EventKind::Decide => {
                a.decided.insert(r.peer);
            }
            _ => {}
        }
    }
    a.max_corrupt_per_stamp = corrupt_by_stamp.values().map(BTreeSet::len).max().unwrap_or(0);
    let final_corrupt = corrupt_by_stamp.values().next_back().cloned().unwrap_or_default();
    a.q_max_honest = a
        .q_per_peer
        .iter()
        .filter(|(p, _)| !a.crashed.contains(p) && !final_corrupt.contains(p))
        .map(|(_, &q)| q)
        .max()
        .unwrap_or(0);
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ratio;
    use serde_json::json;

    #[test]
    fn records_round_trip_through_ndjson() {
        let mut log = EventLog::new(true);
        log.push(Stamp::Round(2), EventKind::Query, PeerId::new(3), json!({"count": 4}));
        log.push(Stamp::Time(Ratio::new(1, 2)), EventKind::Send, PeerId::new(1), Value::Null);
        let text = log.to_ndjson();
        assert!(text.lines().next().unwrap().contains("\"round\":2"));
        assert!(text.lines().nth(1).unwrap().contains("\"time\":\"1/2\""));
        let back = EventLog::parse_ndjson(&text).unwrap();
        assert_eq!(back, log.records());
    }

    #[test]
    fn disabled_log_stays_empty() {
        let mut log = EventLog::new(false);
        log.push(Stamp::Round(1), EventKind::Decide, PeerId::new(1), Value::Null);
        assert!(log.records().is_empty());
    }

    #[test]
    fn audit_sums_queries_and_flags_activity_after_crash() {
        let mut log = EventLog::new(true);
        let p1 = PeerId::new(1);
        let p2 = PeerId::new(2);
        log.push(Stamp::Round(1), EventKind::Query, p1, json!({"count": 2}));
        log.push(Stamp::Round(1), EventKind::Query, p2, json!({"count": 5}));
        log.push(Stamp::Round(2), EventKind::Crash, p2, Value::Null);
        log.push(Stamp::Round(3), EventKind::Send, p2, Value::Null);
        let a = audit_records(log.records());
        assert_eq!(a.q_per_peer[&1], 2);
        assert_eq!(a.q_max_honest, 2);
        assert!(a.active_after_crash.contains(&2));
    }
}
