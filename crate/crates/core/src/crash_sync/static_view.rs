//! Views of f+1 rounds. The leader reads bit I in the first round, then for
//! f+1 rounds every peer that knows bit I sends it to everyone. A chain of
//! f+1 relays contains a live peer, so at the end of the view either every
//! live peer knows the bit or none does, and all peers stay in step.

use std::collections::BTreeSet;

use serde_json::json;

use super::{lead, next_view, ViewTrace};
use crate::bits::{BitString, PartialBits};
use crate::error::SimError;
use crate::metrics::field_bits;
use crate::model::{PeerId, SimConfig};
use crate::sync_sim::{MessageCtx, Payload, QueryCtx, SyncPeer, Wire};

/// ⟨view v, i, b⟩.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewMsg {
    pub view: u64,
    pub index: usize,
    pub bit: bool,
}

/// Views never exceed n + k·(f+1) in practice; price them against (n+k)·k.
pub(crate) fn view_field(wire: Wire) -> u64 {
    field_bits(((wire.n + wire.k) * wire.k) as u64)
}

impl Payload for ViewMsg {
    fn payload_bits(&self, wire: Wire) -> u64 {
        view_field(wire) + field_bits(wire.n as u64) + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StaticPeer {
    me: PeerId,
    k: usize,
    n: usize,
    /// f: a view lasts f+1 rounds.
    f: usize,
    view: u64,
    /// 1-based index of the bit being learned.
    index: usize,
    suspected_crashed: BTreeSet<PeerId>,
    res: PartialBits,
    trace: Vec<ViewTrace>,
    output: Option<BitString>,
}

impl StaticPeer {
    pub fn new(me: PeerId, n: usize, k: usize, f: usize) -> Self {
        StaticPeer {
            me,
            k,
            n,
            f,
            view: 1,
            index: 1,
            suspected_crashed: BTreeSet::new(),
            res: PartialBits::unknown(n),
            trace: Vec::new(),
            output: None,
        }
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Peers this one has seen fail to lead a view.
    pub fn suspected_crashed(&self) -> &BTreeSet<PeerId> {
        &self.suspected_crashed
    }

    pub fn res(&self) -> &PartialBits {
        &self.res
    }

    pub fn trace(&self) -> &[ViewTrace] {
        &self.trace
    }

    fn view_round(&self, round: u64) -> u64 {
        (round - 1) % (self.f as u64 + 1) + 1
    }

    fn current_bit(&self) -> Option<bool> {
        self.res.get(self.index - 1)
    }

    fn learn(&mut self, index: usize, bit: bool) -> Result<(), SimError> {
        if index == 0 || index > self.n {
            return Err(SimError::invariant(format!("{} got bit index {index}", self.me)));
        }
        if !self.res.set(index - 1, bit) {
            return Err(SimError::invariant(format!("{} got two values for bit {index}", self.me)));
        }
        Ok(())
    }
}

/// f is the fault budget ⌊βk⌋.
pub fn static_peers(cfg: &SimConfig) -> Vec<StaticPeer> {
    let f = cfg.budget();
    PeerId::all(cfg.k).map(|p| StaticPeer::new(p, cfg.n, cfg.k, f)).collect()
}

impl SyncPeer for StaticPeer {
    type Msg = ViewMsg;

    fn on_query(&mut self, ctx: &mut QueryCtx<'_, ViewMsg>) -> Result<(), SimError> {
        if self.output.is_some() {
            return Ok(());
        }
        for d in ctx.inbox.iter() {
            if d.msg.view == self.view {
                self.learn(d.msg.index, d.msg.bit)?;
            }
        }
        let t = self.view_round(ctx.round);
        if t == 1 && ctx.round > 1 {
            let leader = lead(self.view, self.k);
            let good = self.current_bit().is_some();
            self.trace.push(ViewTrace {
                view: self.view,
                leader: leader.get(),
                good,
            });
            ctx.note(json!({"view": self.view, "leader": leader.get(), "good": good}));
            if good {
                self.index += 1;
            } else {
                self.suspected_crashed.insert(leader);
            }
            self.view = next_view(self.view, self.k, &self.suspected_crashed)?;
            if self.index > self.n {
                self.output = self.res.to_complete();
                return Ok(());
            }
        }
        if t == 1 && lead(self.view, self.k) == self.me && self.current_bit().is_none() {
            ctx.query(self.index);
        }
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut MessageCtx<'_, ViewMsg>) -> Result<(), SimError> {
        if self.output.is_some() {
            return Ok(());
        }
        if let Some(b) = ctx.answers.bit(self.index) {
            self.learn(self.index, b)?;
        }
        if let Some(bit) = self.current_bit() {
            ctx.send_all(ViewMsg {
                view: self.view,
                index: self.index,
                bit,
            });
        }
        Ok(())
    }

    fn output(&self) -> Option<&BitString> {
        self.output.as_ref()
    }
}
