//! Up to f crashes, f < k, in at most ⌈log_{k/f} n⌉ phases.
//!
//! Stage 1 of phase p: read the unknown bits this peer owns and ask each
//! other owner for the unknown bits it owns. Stage 2: once the owners of
//! all but at most f lists are fully known (H_p), send everyone the rest
//! (F_p) with the indices still needed. A peer answers such a request with
//! the bits of each j in its own H_p, "me neither" otherwise. Stage 3: with
//! k−f answers, move on. Bits nobody could supply stay unknown and are
//! owned by someone else in the next phase.
//!
//! Ownership is one function of (phase, bit) shared by all peers, so two
//! peers that both lack a bit always ask the same owner, and the owner has
//! read the bit by the time it answers. Splitting each block of bits with
//! a common owner history evenly keeps the bits of silent owners spread
//! over all k peers, as reassigning only those bits would.

use std::collections::BTreeSet;
use std::rc::Rc;

use num_bigint::BigUint;
use serde::Serialize;
use serde_json::json;

use super::{bit_list_bits, even_owner, harvest, index_list_bits, peer_bits, BitList};
use crate::async_sim::{AsyncCtx, AsyncPeer};
use crate::bits::{BitString, PartialBits};
use crate::error::SimError;
use crate::model::{PeerId, Ratio, SimConfig};
use crate::rng::derive;
use crate::sync_sim::{Payload, Wire};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FCrashMsg {
    /// Please send these bits, which you own in `phase`.
    Stage1Request { phase: u32, indices: Vec<usize> },
    Stage1Response { phase: u32, bits: BitList },
    /// For every peer this one missed, the indices still needed.
    Stage2Request { phase: u32, needs: Vec<(PeerId, Vec<usize>)> },
    /// Per missed peer: its bits, or `None` for "me neither".
    Stage2Response { phase: u32, answers: Vec<(PeerId, Option<BitList>)> },
    /// The full input, sent on termination.
    Final { bits: BitString },
}

impl Payload for FCrashMsg {
    fn payload_bits(&self, wire: Wire) -> u64 {
        // Phase numbers stay below 64; two more bits tag the kind.
        let head = 6 + 3;
        head + match self {
            FCrashMsg::Stage1Request { indices, .. } => index_list_bits(indices, wire),
            FCrashMsg::Stage1Response { bits, .. } => bit_list_bits(bits, wire),
            FCrashMsg::Stage2Request { needs, .. } => needs
                .iter()
                .map(|(_, idx)| peer_bits(wire) + index_list_bits(idx, wire))
                .sum(),
            FCrashMsg::Stage2Response { answers, .. } => answers
                .iter()
                .map(|(_, b)| peer_bits(wire) + 1 + b.as_ref().map_or(0, |b| bit_list_bits(b, wire)))
                .sum(),
            FCrashMsg::Final { bits } => bits.len() as u64,
        }
    }
}

/// ⌈log_{k/f} n⌉ in exact arithmetic: the least c with k^c ≥ n·f^c.
/// With no faults one phase suffices.
pub fn phase_cap(n: usize, k: usize, f: usize) -> u32 {
    if f == 0 {
        return 1;
    }
    assert!(f < k, "need f < k");
    let (n, k, f) = (BigUint::from(n), BigUint::from(k), BigUint::from(f));
    let mut c = 0u32;
    let mut kc = BigUint::from(1u32);
    let mut fc = BigUint::from(1u32);
    while kc < &n * &fc {
        kc *= &k;
        fc *= &f;
        c += 1;
    }
    c
}

/// Owner of every bit in every phase up to the cap.
///
/// Bits with the same owner history form a block. Phase 0 has the k even
/// blocks of the input; in each later phase every block is split evenly
/// into k children, child c going to peer c. A block smaller than k is
/// rotated by a pseudo-random offset so that small blocks do not all land
/// on the first peers.
#[derive(Clone, Debug)]
pub struct Assignment {
    k: usize,
    /// owner[p][i], 0-based peer index.
    owner: Vec<Vec<u32>>,
    /// lists[p][j]: 0-based bits owned by j in phase p, ascending.
    lists: Vec<Vec<Vec<usize>>>,
}

impl Assignment {
    pub fn new(n: usize, k: usize, phases: u32) -> Self {
        let first: Vec<u32> = (0..n).map(|i| even_owner(i, n, k) as u32).collect();
        let mut blocks: Vec<Vec<usize>> = Self::lists_of(&first, k).into_iter().filter(|b| !b.is_empty()).collect();
        let mut owner = vec![first];
        for p in 1..=phases as usize {
            let mut next = vec![0u32; n];
            let mut children = Vec::with_capacity(blocks.len() * k.min(8));
            for block in &blocks {
                let m = block.len();
                let rot = if m >= k { 0 } else { (derive(p as u64, block[0] as u64) % k as u64) as usize };
                let mut parts: Vec<Vec<usize>> = vec![Vec::new(); k];
                for (l, &i) in block.iter().enumerate() {
                    let c = (even_owner(l, m, k) + rot) % k;
                    next[i] = c as u32;
                    parts[c].push(i);
                }
                children.extend(parts.into_iter().filter(|b| !b.is_empty()));
            }
            blocks = children;
            owner.push(next);
        }
        let lists = owner.iter().map(|o| Self::lists_of(o, k)).collect();
        Assignment { k, owner, lists }
    }

    fn lists_of(owner: &[u32], k: usize) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); k];
        for (i, &j) in owner.iter().enumerate() {
            lists[j as usize].push(i);
        }
        lists
    }

    pub fn owner(&self, phase: u32, bit: usize) -> PeerId {
        PeerId::from_index(self.owner[phase as usize][bit] as usize)
    }

    pub fn list(&self, phase: u32, peer: PeerId) -> &[usize] {
        &self.lists[phase as usize][peer.index()]
    }

    pub fn phases(&self) -> u32 {
        self.owner.len() as u32 - 1
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Unknown bits and the per-peer query total when a phase began.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PhaseAudit {
    pub phase: u32,
    pub unknown: usize,
    pub queries: u64,
}

#[derive(Clone, Debug)]
pub struct FCrashPeer {
    me: PeerId,
    k: usize,
    f: usize,
    cap: u32,
    unblock: bool,
    assign: Rc<Assignment>,
    res: PartialBits,
    phase: u32,
    stage: u8,
    /// Unknown bits per owner in the current phase.
    missing_count: Vec<usize>,
    /// F_p as sent in stage 2.
    absent: Vec<PeerId>,
    responses: usize,
    stage1_waiting: Vec<(PeerId, u32, Vec<usize>)>,
    stage2_waiting: Vec<(PeerId, u32, Vec<(PeerId, Vec<usize>)>)>,
    audits: Vec<PhaseAudit>,
    halted: bool,
    output: Option<BitString>,
}

impl FCrashPeer {
    pub fn new(me: PeerId, n: usize, f: usize, unblock: bool, assign: Rc<Assignment>) -> Self {
        let k = assign.k();
        FCrashPeer {
            me,
            k,
            f,
            cap: assign.phases(),
            unblock,
            assign,
            res: PartialBits::unknown(n),
            phase: 0,
            stage: 1,
            missing_count: vec![0; k],
            absent: Vec::new(),
            responses: 0,
            stage1_waiting: Vec::new(),
            stage2_waiting: Vec::new(),
            audits: Vec::new(),
            halted: false,
            output: None,
        }
    }

    pub fn phase(&self) -> u32 {
        self.phase
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn res(&self) -> &PartialBits {
        &self.res
    }

    pub fn audits(&self) -> &[PhaseAudit] {
        &self.audits
    }

    /// H_p for the current phase.
    pub fn heard(&self) -> BTreeSet<PeerId> {
        PeerId::all(self.k).filter(|p| self.missing_count[p.index()] == 0).collect()
    }

    fn heard_count(&self) -> usize {
        self.missing_count.iter().filter(|&&c| c == 0).count()
    }

    /// Whether every bit `peer` owns in `phase` is known.
    fn complete_in(&self, phase: u32, peer: PeerId) -> bool {
        if phase == self.phase {
            return self.missing_count[peer.index()] == 0;
        }
        self.assign.list(phase, peer).iter().all(|&i| self.res.is_known(i))
    }

    fn learn(&mut self, list: &BitList) -> Result<(), SimError> {
        for &(i, _) in list {
            if i >= 1 && i <= self.res.len() && !self.res.is_known(i - 1) && self.phase <= self.cap {
                let j = self.assign.owner(self.phase, i - 1).index();
                self.missing_count[j] = self.missing_count[j].saturating_sub(1);
            }
        }
        harvest(&mut self.res, self.me, list)?;
        Ok(())
    }

    fn unknown_owned_by(&self, peer: PeerId) -> Vec<usize> {
        self.assign
            .list(self.phase, peer)
            .iter()
            .filter(|&&i| !self.res.is_known(i))
            .map(|&i| i + 1)
            .collect()
    }

    fn enter_phase(&mut self, ctx: &mut AsyncCtx<'_, FCrashMsg>) -> Result<(), SimError> {
        self.stage = 1;
        self.absent.clear();
        self.responses = 0;
        let unknown = self.res.unknown_count();
        self.audits.push(PhaseAudit {
            phase: self.phase,
            unknown,
            queries: ctx.queries(),
        });
        ctx.note(json!({"phase": self.phase, "unknown": unknown}));
        if self.phase >= self.cap {
            return self.terminate(ctx);
        }
        for p in PeerId::all(self.k) {
            self.missing_count[p.index()] = self.unknown_owned_by(p).len();
        }
        let mine = self.unknown_owned_by(self.me);
        let mut read = Vec::with_capacity(mine.len());
        for i in mine {
            read.push((i, ctx.query(i)?));
        }
        self.learn(&read)?;
        for p in PeerId::all(self.k).filter(|p| *p != self.me) {
            let indices = self.unknown_owned_by(p);
            if !indices.is_empty() {
                ctx.send_to(p, FCrashMsg::Stage1Request { phase: self.phase, indices });
            }
        }
        self.stage = 2;
        Ok(())
    }

    fn terminate(&mut self, ctx: &mut AsyncCtx<'_, FCrashMsg>) -> Result<(), SimError> {
        let rest: Vec<usize> = self.res.unknown_positions().collect();
        for i in rest {
            let b = ctx.query(i + 1)?;
            self.res.set(i, b);
        }
        let bits = self.res.to_complete().expect("every bit known");
        ctx.send_all(FCrashMsg::Final { bits: bits.clone() });
        self.output = Some(bits);
        self.halted = true;
        Ok(())
    }

    fn flush_requests(&mut self, ctx: &mut AsyncCtx<'_, FCrashMsg>) {
        let (phase, stage) = (self.phase, self.stage);
        let ready1 = |p: u32| (phase == p && stage >= 2) || phase > p;
        let ready2 = |p: u32| (phase == p && stage >= 3) || phase > p;
        for (from, p, indices) in std::mem::take(&mut self.stage1_waiting) {
            if ready1(p) {
                let bits = indices
                    .iter()
                    .filter_map(|&i| self.res.get(i - 1).map(|b| (i, b)))
                    .collect();
                ctx.send_to(from, FCrashMsg::Stage1Response { phase: p, bits });
            } else {
                self.stage1_waiting.push((from, p, indices));
            }
        }
        for (from, p, needs) in std::mem::take(&mut self.stage2_waiting) {
            if ready2(p) {
                let answers = needs
                    .iter()
                    .map(|(j, idx)| {
                        let bits = self.complete_in(p, *j).then(|| {
                            idx.iter()
                                .filter_map(|&i| self.res.get(i - 1).map(|b| (i, b)))
                                .collect()
                        });
                        (*j, bits)
                    })
                    .collect();
                ctx.send_to(from, FCrashMsg::Stage2Response { phase: p, answers });
            } else {
                self.stage2_waiting.push((from, p, needs));
            }
        }
    }

    fn advance(&mut self, ctx: &mut AsyncCtx<'_, FCrashMsg>) -> Result<(), SimError> {
        while !self.halted {
            self.flush_requests(ctx);
            if self.heard_count() == self.k {
                return self.terminate(ctx);
            }
            match self.stage {
                2 if self.heard_count() + self.f >= self.k => {
                    self.absent = PeerId::all(self.k)
                        .filter(|p| self.missing_count[p.index()] > 0)
                        .collect();
                    let needs = self.absent.iter().map(|&j| (j, self.unknown_owned_by(j))).collect();
                    ctx.send_all(FCrashMsg::Stage2Request { phase: self.phase, needs });
                    // This peer's own answer: "me neither" for every absent peer.
                    self.responses = 1;
                    self.stage = 3;
                }
                3 => {
                    let settled = self.unblock && self.absent.iter().all(|j| self.missing_count[j.index()] == 0);
                    if !settled && self.responses + self.f < self.k {
                        return Ok(());
                    }
                    self.phase += 1;
                    self.enter_phase(ctx)?;
                }
                _ => return Ok(()),
            }
        }
        Ok(())
    }
}

/// f is the `f` constant when set, else the budget ⌊βk⌋. The `unblock`
/// constant (default 1) turns the stage-3 early exit on or off.
pub fn f_crash_peers(cfg: &SimConfig) -> Result<Vec<FCrashPeer>, SimError> {
    let f = match cfg.constants.get("f") {
        Some(r) if r.is_integer() && *r >= Ratio::from_integer(0) => r.to_integer() as usize,
        Some(_) => return Err(SimError::config("f must be a non-negative integer")),
        None => cfg.budget(),
    };
    if f >= cfg.k {
        return Err(SimError::config("the f-crash protocol needs f < k"));
    }
    let unblock = cfg.constant("unblock", Ratio::from_integer(1)) != Ratio::from_integer(0);
    let assign = Rc::new(Assignment::new(cfg.n, cfg.k, phase_cap(cfg.n, cfg.k, f)));
    Ok(PeerId::all(cfg.k)
        .map(|p| FCrashPeer::new(p, cfg.n, f, unblock, assign.clone()))
        .collect())
}

impl AsyncPeer for FCrashPeer {
    type Msg = FCrashMsg;

    fn on_start(&mut self, ctx: &mut AsyncCtx<'_, FCrashMsg>) -> Result<(), SimError> {
        self.enter_phase(ctx)?;
        self.advance(ctx)
    }

    fn on_deliver(&mut self, from: PeerId, msg: FCrashMsg, ctx: &mut AsyncCtx<'_, FCrashMsg>) -> Result<(), SimError> {
        match msg {
            FCrashMsg::Stage1Request { phase, indices } => self.stage1_waiting.push((from, phase, indices)),
            FCrashMsg::Stage1Response { bits, .. } => self.learn(&bits)?,
            FCrashMsg::Stage2Request { phase, needs } => self.stage2_waiting.push((from, phase, needs)),
            FCrashMsg::Stage2Response { phase, answers } => {
                for (_, bits) in &answers {
                    if let Some(b) = bits {
                        self.learn(b)?;
                    }
                }
                if phase == self.phase && self.stage == 3 {
                    self.responses += 1;
                }
            }
            FCrashMsg::Final { bits } => {
                let list: BitList = bits.iter().enumerate().map(|(i, b)| (i + 1, b)).collect();
                self.learn(&list)?;
            }
        }
        self.advance(ctx)
    }

    fn output(&self) -> Option<&BitString> {
        self.output.as_ref()
    }

    fn halted(&self) -> bool {
        self.halted
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_is_exact_ceiling() {
        // (16/4)^6 = 4096.
        assert_eq!(phase_cap(4096, 16, 4), 6);
        // 2^12 = 4096.
        assert_eq!(phase_cap(4096, 16, 8), 12);
        assert_eq!(phase_cap(4097, 16, 8), 13);
        assert_eq!(phase_cap(100, 8, 0), 1);
    }

    #[test]
    fn blocks_split_evenly_by_history() {
        let a = Assignment::new(64, 4, 3);
        assert_eq!(a.list(0, PeerId::new(2)), (16..32).collect::<Vec<_>>().as_slice());
        // The block 16..32 splits into four runs of four.
        assert_eq!(a.owner(1, 16), PeerId::new(1));
        assert_eq!(a.owner(1, 20), PeerId::new(2));
        // The run 20..24 splits one bit per peer.
        assert_eq!((20..24).map(|i| a.owner(2, i).get()).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        // Bits with the same history spread over every peer in each phase.
        for p in 0..=3 {
            assert!((1..=4).all(|j| !a.list(p, PeerId::new(j)).is_empty()));
        }
    }
}
