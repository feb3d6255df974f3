//! Two phases tolerating one crash.
//!
//! Stage 1: read the unknown assigned bits and send the assigned bits to
//! everyone. Stage 2: once k−1 peers (this one included) were heard, ask
//! everyone for the bits of the one missing peer J; answer such requests
//! with J's bits or "me neither". Stage 3: with k−1 answers, either recover
//! J's bits or, if nobody had them, split J's unknown bits among the other
//! k−1 peers for the next phase. A peer holding every bit switches to
//! completion mode and from then on just sends everything it knows.

use std::collections::BTreeSet;

use serde::Serialize;
use serde_json::json;

use super::{bit_list_bits, even_owner, harvest, peer_bits, BitList};
use crate::async_sim::{AsyncCtx, AsyncPeer};
use crate::bits::{BitString, PartialBits};
use crate::error::SimError;
use crate::model::{PeerId, SimConfig};
use crate::sync_sim::{Payload, Wire};

const PHASES: u8 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OneCrashMsg {
    Stage1 { phase: u8, bits: BitList },
    Stage2 { phase: u8, missing: PeerId },
    /// `None` is "me neither".
    Response { phase: u8, missing: PeerId, bits: Option<BitList> },
}

impl Payload for OneCrashMsg {
    fn payload_bits(&self, wire: Wire) -> u64 {
        // Phase and stage tags take two bits each.
        4 + match self {
            OneCrashMsg::Stage1 { bits, .. } => bit_list_bits(bits, wire),
            OneCrashMsg::Stage2 { .. } => peer_bits(wire),
            OneCrashMsg::Response { bits, .. } => {
                peer_bits(wire) + 1 + bits.as_ref().map_or(0, |b| bit_list_bits(b, wire))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mode {
    Active,
    Completion,
}

#[derive(Clone, Debug)]
pub struct OneCrashPeer {
    me: PeerId,
    k: usize,
    /// Current owner (0-based peer index) of every bit.
    owner: Vec<usize>,
    res: PartialBits,
    mode: Mode,
    /// 1 or 2, or 3 once both phases are over.
    phase: u8,
    stage: u8,
    /// Peers whose stage-1 message arrived, per phase; includes this peer.
    heard: [BTreeSet<PeerId>; 2],
    missing: Option<PeerId>,
    responses: [usize; 2],
    recovered: [bool; 2],
    /// Stage-2 requests waiting for this peer to finish stage 2.
    waiting: Vec<(PeerId, u8, PeerId)>,
    /// Bits reassigned at the end of each phase.
    reassigned: Vec<usize>,
    output: Option<BitString>,
}

impl OneCrashPeer {
    pub fn new(me: PeerId, n: usize, k: usize) -> Self {
        OneCrashPeer {
            me,
            k,
            owner: (0..n).map(|i| even_owner(i, n, k)).collect(),
            res: PartialBits::unknown(n),
            mode: Mode::Active,
            phase: 1,
            stage: 1,
            heard: [BTreeSet::new(), BTreeSet::new()],
            missing: None,
            responses: [0; 2],
            recovered: [false; 2],
            waiting: Vec::new(),
            reassigned: Vec::new(),
            output: None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn phase(&self) -> u8 {
        self.phase
    }

    pub fn res(&self) -> &PartialBits {
        &self.res
    }

    pub fn reassigned(&self) -> &[usize] {
        &self.reassigned
    }

    fn slot(phase: u8) -> usize {
        (phase - 1) as usize
    }

    fn bits_of(&self, peer: PeerId) -> BitList {
        let j = peer.index();
        (0..self.owner.len())
            .filter(|&i| self.owner[i] == j)
            .filter_map(|i| self.res.get(i).map(|b| (i + 1, b)))
            .collect()
    }

    fn known_bits(&self) -> BitList {
        (0..self.res.len()).filter_map(|i| self.res.get(i).map(|b| (i + 1, b))).collect()
    }

    fn learn(&mut self, list: &BitList) -> Result<(), SimError> {
        harvest(&mut self.res, self.me, list)?;
        if self.res.is_complete() {
            self.mode = Mode::Completion;
            if self.output.is_none() {
                self.output = self.res.to_complete();
            }
        }
        Ok(())
    }

    fn enter_phase(&mut self, ctx: &mut AsyncCtx<'_, OneCrashMsg>) -> Result<(), SimError> {
        if self.phase > PHASES {
            return Ok(());
        }
        self.stage = 1;
        let me = self.me.index();
        let mut read = Vec::new();
        for i in 0..self.owner.len() {
            if self.owner[i] == me && !self.res.is_known(i) {
                read.push((i + 1, ctx.query(i + 1)?));
            }
        }
        self.learn(&read)?;
        let bits = match self.mode {
            Mode::Active => self.bits_of(self.me),
            Mode::Completion => self.known_bits(),
        };
        ctx.send_all(OneCrashMsg::Stage1 { phase: self.phase, bits });
        self.heard[Self::slot(self.phase)].insert(self.me);
        self.stage = 2;
        Ok(())
    }

    fn can_answer(&self, phase: u8) -> bool {
        self.res.is_complete() || self.heard[Self::slot(phase)].len() + 1 >= self.k
    }

    fn answer(&self, phase: u8, missing: PeerId) -> OneCrashMsg {
        let bits = if self.res.is_complete() || self.heard[Self::slot(phase)].contains(&missing) {
            Some(self.bits_of(missing))
        } else {
            None
        };
        OneCrashMsg::Response { phase, missing, bits }
    }

    fn flush_requests(&mut self, ctx: &mut AsyncCtx<'_, OneCrashMsg>) {
        let waiting = std::mem::take(&mut self.waiting);
        for (from, phase, missing) in waiting {
            if self.can_answer(phase) {
                ctx.send_to(from, self.answer(phase, missing));
            } else {
                self.waiting.push((from, phase, missing));
            }
        }
    }

    /// Moves through stages while their conditions hold.
    fn advance(&mut self, ctx: &mut AsyncCtx<'_, OneCrashMsg>) -> Result<(), SimError> {
        loop {
            self.flush_requests(ctx);
            if self.phase > PHASES {
                return Ok(());
            }
            let slot = Self::slot(self.phase);
            match self.stage {
                2 if self.heard[slot].len() + 1 >= self.k => {
                    if self.heard[slot].len() == self.k || self.res.is_complete() {
                        self.mode = Mode::Completion;
                    }
                    if self.mode == Mode::Completion {
                        self.next_phase(ctx)?;
                        continue;
                    }
                    let missing = PeerId::all(self.k)
                        .find(|p| !self.heard[slot].contains(p))
                        .expect("one peer missing");
                    self.missing = Some(missing);
                    ctx.send_all(OneCrashMsg::Stage2 { phase: self.phase, missing });
                    self.stage = 3;
                }
                3 => {
                    let missing = self.missing.expect("set in stage 2");
                    let settled = self.heard[slot].contains(&missing) || self.res.is_complete();
                    // This peer's own answer is "me neither".
                    if !settled && self.responses[slot] + 2 < self.k {
                        return Ok(());
                    }
                    if settled || self.recovered[slot] {
                        self.mode = Mode::Completion;
                    } else {
                        self.reassign(missing, ctx);
                    }
                    self.next_phase(ctx)?;
                }
                _ => return Ok(()),
            }
        }
    }

    fn reassign(&mut self, missing: PeerId, ctx: &mut AsyncCtx<'_, OneCrashMsg>) {
        let j = missing.index();
        let others: Vec<usize> = (0..self.k).filter(|&p| p != j).collect();
        let lost: Vec<usize> = (0..self.owner.len())
            .filter(|&i| self.owner[i] == j && !self.res.is_known(i))
            .collect();
        let m = lost.len();
        for (l, &i) in lost.iter().enumerate() {
            self.owner[i] = others[even_owner(l, m, others.len())];
        }
        self.reassigned.push(m);
        ctx.note(json!({"phase": self.phase, "reassigned": m, "missing": missing.get()}));
    }

    fn next_phase(&mut self, ctx: &mut AsyncCtx<'_, OneCrashMsg>) -> Result<(), SimError> {
        self.phase += 1;
        self.missing = None;
        self.enter_phase(ctx)
    }
}

pub fn one_crash_peers(cfg: &SimConfig) -> Result<Vec<OneCrashPeer>, SimError> {
    if cfg.k < 3 {
        return Err(SimError::config("the one-crash protocol needs k ≥ 3"));
    }
    Ok(PeerId::all(cfg.k).map(|p| OneCrashPeer::new(p, cfg.n, cfg.k)).collect())
}

impl AsyncPeer for OneCrashPeer {
    type Msg = OneCrashMsg;

    fn on_start(&mut self, ctx: &mut AsyncCtx<'_, OneCrashMsg>) -> Result<(), SimError> {
        self.enter_phase(ctx)?;
        self.advance(ctx)
    }

    fn on_deliver(&mut self, from: PeerId, msg: OneCrashMsg, ctx: &mut AsyncCtx<'_, OneCrashMsg>) -> Result<(), SimError> {
        match msg {
            OneCrashMsg::Stage1 { phase, bits } => {
                self.learn(&bits)?;
                if (1..=PHASES).contains(&phase) {
                    self.heard[Self::slot(phase)].insert(from);
                }
            }
            OneCrashMsg::Stage2 { phase, missing } => {
                if (1..=PHASES).contains(&phase) {
                    self.waiting.push((from, phase, missing));
                }
            }
            OneCrashMsg::Response { phase, missing, bits } => {
                if let Some(b) = &bits {
                    self.learn(b)?;
                }
                if phase == self.phase && self.stage == 3 && Some(missing) == self.missing {
                    let slot = Self::slot(phase);
                    self.responses[slot] += 1;
                    self.recovered[slot] |= bits.is_some();
                }
            }
        }
        self.advance(ctx)
    }

    fn output(&self) -> Option<&BitString> {
        self.output.as_ref()
    }
}
