//! Envelopes and the Q/T/M/S counters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{ratio_to_f64, PeerId, Ratio};

/// When something happens: a round number or an exact async time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stamp {
    Round(u64),
    Time(Ratio),
}

impl Stamp {
    pub fn as_f64(self) -> f64 {
        match self {
            Stamp::Round(r) => r as f64,
            Stamp::Time(t) => ratio_to_f64(t),
        }
    }
}

impl Serialize for Stamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Stamp::Round(r) => s.serialize_u64(*r),
            Stamp::Time(t) => s.serialize_str(&t.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Stamp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Round(u64),
            Time(String),
        }
        match Raw::deserialize(d)? {
            Raw::Round(r) => Ok(Stamp::Round(r)),
            Raw::Time(t) => crate::model::parse_ratio(&t)
                .map(Stamp::Time)
                .map_err(serde::de::Error::custom),
        }
    }
}

/// Who a message is addressed to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Recipients {
    /// Every peer. The sender's own copy is free.
    All,
    One(PeerId),
    /// Explicit set, e.g. what survives a crash cut of a broadcast.
    Set(Vec<PeerId>),
}

impl Recipients {
    /// Number of deliveries charged to the sender.
    pub fn charged(&self, sender: PeerId, k: usize) -> u64 {
        match self {
            Recipients::All => k.saturating_sub(1) as u64,
            Recipients::One(p) => u64::from(*p != sender),
            Recipients::Set(v) => v.iter().filter(|p| **p != sender).count() as u64,
        }
    }

    pub fn contains(&self, p: PeerId) -> bool {
        match self {
            Recipients::All => true,
            Recipients::One(q) => *q == p,
            Recipients::Set(v) => v.contains(&p),
        }
    }

    /// Concrete recipient list for a clique of `k` peers.
    pub fn expand(&self, k: usize) -> Vec<PeerId> {
        match self {
            Recipients::All => PeerId::all(k).collect(),
            Recipients::One(p) => vec![*p],
            Recipients::Set(v) => v.clone(),
        }
    }
}

/// A message in flight.
#[derive(Clone, Debug)]
pub struct Envelope<M> {
    pub sender: PeerId,
    pub recipients: Recipients,
    pub payload: M,
    pub payload_bits: u64,
    pub sent_at: Stamp,
    pub deliver_at: Stamp,
}

/// Per-run complexity measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub q_max: u64,
    pub q_per_peer: BTreeMap<PeerId, u64>,
    pub t: Stamp,
    pub m_total: u64,
    pub s_max: u64,
    pub correct: bool,
    pub seed: u64,
}

impl RunMetrics {
    pub fn t_f64(&self) -> f64 {
        self.t.as_f64()
    }
}

/// Accumulates M and S for honest senders.
#[derive(Clone, Debug, Default)]
pub struct MessageCounter {
    pub m_total: u64,
    pub s_max: u64,
}

impl MessageCounter {
    /// Charges one emission. Faulty senders leave the counters untouched.
    pub fn charge(&mut self, sender_honest: bool, deliveries: u64, payload_bits: u64) {
        if !sender_honest || deliveries == 0 {
            return;
        }
        self.m_total += deliveries;
        self.s_max = self.s_max.max(payload_bits);
    }

    pub fn charge_message<M>(&mut self, env: &Envelope<M>, sender_honest: bool, k: usize) {
        let deliveries = env.recipients.charged(env.sender, k);
        self.charge(sender_honest, deliveries, env.payload_bits);
    }
}

/// Assembles final metrics from raw counters.
pub fn finish_metrics(
    q_counts: &[u64],
    honest: &[bool],
    t: Stamp,
    counter: &MessageCounter,
    correct: bool,
    seed: u64,
) -> RunMetrics {
    let q_per_peer: BTreeMap<PeerId, u64> = q_counts
        .iter()
        .enumerate()
        .map(|(i, &q)| (PeerId::from_index(i), q))
        .collect();
    let q_max = q_counts
        .iter()
        .zip(honest)
        .filter(|(_, &h)| h)
        .map(|(&q, _)| q)
        .max()
        .unwrap_or(0);
    RunMetrics {
        q_max,
        q_per_peer,
        t,
        m_total: counter.m_total,
        s_max: counter.s_max,
        correct,
        seed,
    }
}

/// Bits needed to write any value in `0..=max`.
pub fn field_bits(max: u64) -> u64 {
    (64 - max.leading_zeros()).max(1) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(recipients: Recipients, bits: u64) -> Envelope<()> {
        Envelope {
            sender: PeerId::new(1),
            recipients,
            payload: (),
            payload_bits: bits,
            sent_at: Stamp::Round(1),
            deliver_at: Stamp::Round(2),
        }
    }

    #[test]
    fn point_to_point_charges_each_recipient() {
        let mut c = MessageCounter::default();
        let to = vec![PeerId::new(2), PeerId::new(3), PeerId::new(4)];
        c.charge_message(&env(Recipients::Set(to), 7), true, 4);
        assert_eq!(c.m_total, 3);
        assert!(c.s_max >= 7);
    }

    #[test]
    fn broadcast_counts_k_minus_one() {
        let mut c = MessageCounter::default();
        c.charge_message(&env(Recipients::All, 5), true, 10);
        assert_eq!(c.m_total, 9);
        assert_eq!(c.s_max, 5);
    }

    #[test]
    fn empty_recipients_and_faulty_senders_are_free() {
        let mut c = MessageCounter::default();
        c.charge_message(&env(Recipients::Set(vec![]), 9), true, 4);
        c.charge_message(&env(Recipients::All, 9), false, 4);
        assert_eq!(c.m_total, 0);
        assert_eq!(c.s_max, 0);
    }

    #[test]
    fn stamps_serialize_as_number_or_fraction() {
        assert_eq!(serde_json::to_string(&Stamp::Round(3)).unwrap(), "3");
        let t = Stamp::Time(Ratio::new(3, 2));
        let text = serde_json::to_string(&t).unwrap();
        assert_eq!(text, "\"3/2\"");
        assert_eq!(serde_json::from_str::<Stamp>(&text).unwrap(), t);
    }

    #[test]
    fn field_widths() {
        assert_eq!(field_bits(1), 1);
        assert_eq!(field_bits(2), 2);
        assert_eq!(field_bits(1024), 11);
    }
}
