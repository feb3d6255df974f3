//! Deterministic crash-tolerant download with rotating leaders.
//!
//! Both protocols split the run into views. The leader of view v is peer
//! ((v−1) mod k)+1; it reads one bit and hands it to everyone. A view whose
//! leader goes quiet marks that leader as crashed, and later views skip it.

mod rapid;
mod static_view;

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::SimError;
use crate::model::PeerId;

pub use rapid::{rapid_peers, RapidMsg, RapidPeer};
pub use static_view::{static_peers, StaticPeer, ViewMsg};

/// Leader of view `v ≥ 1` among `k` peers.
pub fn lead(v: u64, k: usize) -> PeerId {
    PeerId::from_index(((v - 1) % k as u64) as usize)
}

/// Least view after `v` whose leader is not in `crashed`.
pub fn next_view(v: u64, k: usize, crashed: &BTreeSet<PeerId>) -> Result<u64, SimError> {
    (v + 1..=v + k as u64)
        .find(|&w| !crashed.contains(&lead(w, k)))
        .ok_or_else(|| SimError::Liveness("every peer is marked as crashed".into()))
}

/// How a view ended, as seen by one peer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ViewTrace {
    pub view: u64,
    pub leader: u32,
    pub good: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaders_rotate() {
        assert_eq!(lead(1, 4), PeerId::new(1));
        assert_eq!(lead(4, 4), PeerId::new(4));
        assert_eq!(lead(5, 4), PeerId::new(1));
    }

    #[test]
    fn next_view_skips_crashed_leaders() {
        let crashed: BTreeSet<PeerId> = [PeerId::new(2), PeerId::new(3)].into();
        assert_eq!(next_view(1, 4, &crashed).unwrap(), 4);
        let all: BTreeSet<PeerId> = PeerId::all(4).collect();
        assert!(next_view(1, 4, &all).is_err());
    }
}
