//! Two-round views started by explicit view-change requests.
//!
//! The leader of view v starts when the first view-change request for v
//! reaches it: it adopts the highest index among that round's requests,
//! reads the bit if needed and sends it to everyone in two consecutive
//! rounds. A peer that gets both copies moves past the bit and asks the
//! next live leader to start; a peer that hears nothing from its leader in
//! a round where it expects to marks the leader as crashed and does the
//! same. After a request a peer is idle for one round, since the next
//! leader cannot answer sooner.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;

use super::static_view::view_field;
use super::{lead, next_view, ViewTrace};
use crate::bits::{BitString, PartialBits};
use crate::error::SimError;
use crate::metrics::field_bits;
use crate::model::{PeerId, SimConfig};
use crate::sync_sim::{MessageCtx, Payload, QueryCtx, SyncPeer, Wire};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RapidMsg {
    /// ⟨view v, i, b⟩ from the leader of v.
    View { view: u64, index: usize, bit: bool },
    /// ⟨view change v, I⟩ to the leader of v.
    ViewChange { view: u64, index: usize },
}

impl Payload for RapidMsg {
    fn payload_bits(&self, wire: Wire) -> u64 {
        // One tag bit, the view, the index and for views the bit itself.
        let index = field_bits(wire.n as u64 + 1);
        match self {
            RapidMsg::View { .. } => 1 + view_field(wire) + index + 1,
            RapidMsg::ViewChange { .. } => 1 + view_field(wire) + index,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RapidPeer {
    me: PeerId,
    k: usize,
    n: usize,
    view: u64,
    index: usize,
    suspected_crashed: BTreeSet<PeerId>,
    res: PartialBits,
    idle_round: Option<u64>,
    /// Views this peer has started as leader.
    led: BTreeSet<u64>,
    /// (view, index, copies still to send).
    leading: Option<(u64, usize, u8)>,
    pending_query: Option<usize>,
    pending_change: Option<(u64, usize)>,
    /// View messages received per view.
    copies: BTreeMap<u64, u32>,
    trace: Vec<ViewTrace>,
    queries: u64,
    output: Option<BitString>,
}

impl RapidPeer {
    pub fn new(me: PeerId, n: usize, k: usize) -> Self {
        RapidPeer {
            me,
            k,
            n,
            view: 1,
            index: 1,
            suspected_crashed: BTreeSet::new(),
            res: PartialBits::unknown(n),
            idle_round: None,
            led: BTreeSet::new(),
            leading: None,
            pending_query: None,
            pending_change: None,
            copies: BTreeMap::new(),
            trace: Vec::new(),
            queries: 0,
            output: None,
        }
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn suspected_crashed(&self) -> &BTreeSet<PeerId> {
        &self.suspected_crashed
    }

    pub fn res(&self) -> &PartialBits {
        &self.res
    }

    pub fn trace(&self) -> &[ViewTrace] {
        &self.trace
    }

    /// Views this peer led.
    pub fn led(&self) -> &BTreeSet<u64> {
        &self.led
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    fn learn(&mut self, index: usize, bit: bool) -> Result<(), SimError> {
        if index == 0 || index > self.n || !self.res.set(index - 1, bit) {
            return Err(SimError::invariant(format!("{} got a bad value for bit {index}", self.me)));
        }
        Ok(())
    }

    fn change_view(&mut self, round: u64, good: bool) -> Result<(), SimError> {
        let leader = lead(self.view, self.k);
        self.trace.push(ViewTrace {
            view: self.view,
            leader: leader.get(),
            good,
        });
        let next = next_view(self.view, self.k, &self.suspected_crashed)?;
        self.pending_change = Some((next, self.index));
        self.view = next;
        self.idle_round = Some(round + 1);
        Ok(())
    }
}

pub fn rapid_peers(cfg: &SimConfig) -> Vec<RapidPeer> {
    PeerId::all(cfg.k).map(|p| RapidPeer::new(p, cfg.n, cfg.k)).collect()
}

impl SyncPeer for RapidPeer {
    type Msg = RapidMsg;

    fn on_query(&mut self, ctx: &mut QueryCtx<'_, RapidMsg>) -> Result<(), SimError> {
        if ctx.round == 1 {
            return Ok(());
        }
        let mut views = Vec::new();
        let mut requests: BTreeMap<u64, usize> = BTreeMap::new();
        for d in ctx.inbox.iter() {
            match d.msg {
                RapidMsg::View { view, index, bit } if d.from == lead(view, self.k) => {
                    views.push((view, index, bit));
                }
                RapidMsg::View { .. } => {}
                RapidMsg::ViewChange { view, index } => {
                    let hi = requests.entry(view).or_insert(0);
                    *hi = (*hi).max(index);
                }
            }
        }

        let mut changed = false;
        let mut heard = BTreeSet::new();
        views.sort_by_key(|v| v.0);
        for (view, index, bit) in views {
            if view < self.view {
                continue;
            }
            heard.insert(view);
            self.view = view;
            self.index = self.index.max(index);
            self.learn(index, bit)?;
            let seen = self.copies.entry(view).or_insert(0);
            *seen += 1;
            if *seen == 2 && !changed {
                // Never step past a bit this peer does not hold.
                self.index = self.index.max(index + 1);
                self.change_view(ctx.round, true)?;
                changed = true;
            }
        }

        let mut started = false;
        let start = requests
            .iter()
            .rev()
            .find(|(v, _)| **v >= self.view && !self.led.contains(v) && lead(**v, self.k) == self.me)
            .map(|(v, i)| (*v, *i));
        if let Some((view, index)) = start {
            started = true;
            self.led.insert(view);
            self.view = view;
            self.index = self.index.max(index);
            ctx.note(json!({"lead": view, "index": self.index}));
            if self.index <= self.n {
                self.leading = Some((view, self.index, 2));
                if !self.res.is_known(self.index - 1) {
                    self.pending_query = Some(self.index);
                    ctx.query(self.index);
                    self.queries += 1;
                }
            }
        }

        let idle = self.idle_round == Some(ctx.round);
        let own_view = lead(self.view, self.k) == self.me;
        if !idle && !changed && !started && !heard.contains(&self.view) && !own_view {
            self.suspected_crashed.insert(lead(self.view, self.k));
            self.change_view(ctx.round, false)?;
        }
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut MessageCtx<'_, RapidMsg>) -> Result<(), SimError> {
        if ctx.round == 1 {
            ctx.send_to(lead(1, self.k), RapidMsg::ViewChange { view: 1, index: 1 });
            self.idle_round = Some(2);
            return Ok(());
        }
        if let Some(i) = self.pending_query.take() {
            let b = ctx
                .answers
                .bit(i)
                .ok_or_else(|| SimError::invariant("leader query was not answered"))?;
            self.learn(i, b)?;
        }
        if let Some((view, index, left)) = self.leading.take() {
            let bit = self.res.get(index - 1).expect("leader knows its bit");
            ctx.send_all(RapidMsg::View { view, index, bit });
            if left > 1 {
                self.leading = Some((view, index, left - 1));
            }
        }
        if let Some((view, index)) = self.pending_change.take() {
            ctx.send_to(lead(view, self.k), RapidMsg::ViewChange { view, index });
        }
        if self.output.is_none() {
            self.output = self.res.to_complete();
        }
        Ok(())
    }

    fn output(&self) -> Option<&BitString> {
        self.output.as_ref()
    }
}
