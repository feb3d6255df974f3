//! Deterministic download in the asynchronous model with crash faults.
//!
//! Peers work in phases. Each phase every peer reads the bits assigned to
//! it and collects everyone else's; bits owned by peers that stay silent
//! are either recovered from a peer that did hear them or handed out again
//! in the next phase.

mod multi;
mod single;

use crate::bits::PartialBits;
use crate::error::SimError;
use crate::metrics::field_bits;
use crate::model::PeerId;
use crate::sync_sim::Wire;

pub use multi::{f_crash_peers, phase_cap, Assignment, FCrashMsg, FCrashPeer, PhaseAudit};
pub use single::{one_crash_peers, Mode, OneCrashMsg, OneCrashPeer};

/// (1-based index, value) pairs.
pub type BitList = Vec<(usize, bool)>;

/// Index field plus the bit, per pair.
pub(crate) fn bit_list_bits(list: &BitList, wire: Wire) -> u64 {
    list.len() as u64 * (field_bits(wire.n as u64) + 1)
}

pub(crate) fn index_list_bits(list: &[usize], wire: Wire) -> u64 {
    list.len() as u64 * field_bits(wire.n as u64)
}

pub(crate) fn peer_bits(wire: Wire) -> u64 {
    field_bits(wire.k as u64)
}

/// Stores every pair; a pair that contradicts a stored value is an error.
pub(crate) fn harvest(res: &mut PartialBits, me: PeerId, list: &BitList) -> Result<usize, SimError> {
    let mut fresh = 0;
    for &(i, b) in list {
        if i == 0 || i > res.len() {
            return Err(SimError::invariant(format!("{me} got bit index {i}")));
        }
        let was = res.is_known(i - 1);
        if !res.set(i - 1, b) {
            return Err(SimError::invariant(format!("{me} got two values for bit {i}")));
        }
        fresh += usize::from(!was);
    }
    Ok(fresh)
}

/// Owner of 0-based position `l` when `m` items are split evenly among
/// `parts` holders: ⌊l·parts/m⌋.
pub fn even_owner(l: usize, m: usize, parts: usize) -> usize {
    ((l as u128 * parts as u128) / m as u128) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_split_is_balanced() {
        let owners: Vec<usize> = (0..12).map(|l| even_owner(l, 12, 4)).collect();
        assert_eq!(owners, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
        let owners: Vec<usize> = (0..3).map(|l| even_owner(l, 3, 3)).collect();
        assert_eq!(owners, vec![0, 1, 2]);
        // Fewer items than holders: each item to a distinct holder.
        let owners: Vec<usize> = (0..2).map(|l| even_owner(l, 2, 5)).collect();
        assert_eq!(owners, vec![0, 2]);
    }
}
