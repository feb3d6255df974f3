//! The external bit source with per-peer query accounting.

use crate::bits::BitString;
use crate::error::SimError;
use crate::model::{InputVector, PeerId, Timing};

/// Position inside a synchronous round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubRound {
    Query,
    Response,
    Message,
}

/// Read-only source. In synchronous runs queries are only accepted during
/// the query sub-round; the scheduler moves the phase forward.
#[derive(Clone, Debug)]
pub struct Source {
    input: InputVector,
    timing: Timing,
    phase: SubRound,
    counts: Vec<u64>,
}

impl Source {
    pub fn new(input: InputVector, k: usize, timing: Timing) -> Self {
        Source {
            input,
            timing,
            phase: SubRound::Query,
            counts: vec![0; k],
        }
    }

    pub fn input(&self) -> &InputVector {
        &self.input
    }

    pub fn n(&self) -> usize {
        self.input.len()
    }

    pub fn set_phase(&mut self, phase: SubRound) {
        self.phase = phase;
    }

    pub fn phase(&self) -> SubRound {
        self.phase
    }

    fn check(&self, peer: PeerId, index: usize, len: usize) -> Result<(), SimError> {
        if self.timing == Timing::Synchronous && self.phase != SubRound::Query {
            return Err(SimError::Scheduler(format!(
                "{peer} queried bit {index} during the {:?} sub-round",
                self.phase
            )));
        }
        let n = self.n();
        if index == 0 || index + len - 1 > n {
            return Err(SimError::QueryOutOfRange {
                index: if index == 0 { 0 } else { index + len - 1 },
                n,
            });
        }
        if peer.index() >= self.counts.len() {
            return Err(SimError::config(format!("unknown peer {peer}")));
        }
        Ok(())
    }

    /// Reads bit `index` (1-based) and charges one query to `peer`.
    pub fn query_bit(&mut self, peer: PeerId, index: usize) -> Result<bool, SimError> {
        self.check(peer, index, 1)?;
        self.counts[peer.index()] += 1;
        Ok(self.input.as_bits().get(index - 1))
    }

    /// Reads `len` consecutive bits starting at 1-based `start`, charging
    /// `len` queries.
    pub fn query_range(
        &mut self,
        peer: PeerId,
        start: usize,
        len: usize,
    ) -> Result<BitString, SimError> {
        if len == 0 {
            return Ok(BitString::zeros(0));
        }
        self.check(peer, start, len)?;
        self.counts[peer.index()] += len as u64;
        Ok(self.input.interval(start - 1, len))
    }

    pub fn count(&self, peer: PeerId) -> u64 {
        self.counts[peer.index()]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source() -> Source {
        let x = InputVector::from_bools(&[true, false, true]).unwrap();
        Source::new(x, 2, Timing::Synchronous)
    }

    #[test]
    fn reads_bits_and_counts() {
        let mut s = source();
        let p = PeerId::new(1);
        assert!(!s.query_bit(p, 2).unwrap());
        assert!(s.query_bit(p, 1).unwrap());
        assert!(s.query_bit(p, 3).unwrap());
        assert_eq!(s.count(p), 3);
        assert_eq!(s.count(PeerId::new(2)), 0);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let mut s = source();
        let err = s.query_bit(PeerId::new(1), 4).unwrap_err();
        assert!(matches!(err, SimError::QueryOutOfRange { index: 4, n: 3 }));
        assert!(s.query_bit(PeerId::new(1), 0).is_err());
    }

    #[test]
    fn sync_queries_outside_query_subround_fail() {
        let mut s = source();
        s.set_phase(SubRound::Message);
        let err = s.query_bit(PeerId::new(1), 1).unwrap_err();
        assert!(matches!(err, SimError::Scheduler(_)));
        assert_eq!(s.count(PeerId::new(1)), 0);
    }

    #[test]
    fn async_queries_any_time() {
        let x = InputVector::from_bools(&[true]).unwrap();
        let mut s = Source::new(x, 1, Timing::Asynchronous);
        s.set_phase(SubRound::Message);
        assert!(s.query_bit(PeerId::new(1), 1).unwrap());
    }
}
