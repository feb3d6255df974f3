//! Interval doubling: level 0 reads a random interval of width φ, every
//! later level determines a random interval twice as wide from the two
//! halves reported on the level below. One round per level.

use std::rc::Rc;

use rand::Rng;
use serde_json::json;

use super::scheme::{level_threshold, phi_for, shared_tally, tally_for, Claim, FloodPlan, FsTree, Layout, SharedTally};
use crate::bits::BitString;
use crate::error::SimError;
use crate::model::{PeerId, SimConfig};
use crate::sync_sim::{MessageCtx, QueryCtx, SyncPeer};

/// φ = ⌈(n/γk)·8(c+1)·ln n⌉.
pub fn logn_layout(cfg: &SimConfig) -> Result<Layout, SimError> {
    let c = super::scheme::c_constant(cfg);
    Layout::new(cfg.n, phi_for(cfg, 8.0 * (c + 1.0))?)
}

#[derive(Clone, Debug)]
pub struct LogNPeer {
    n: usize,
    layout: Layout,
    gamma_k: usize,
    cache: SharedTally,
    /// What this peer broadcast last round, as (level, id, string).
    last_claim: Option<Claim>,
    pick: usize,
    children: Vec<(usize, Rc<FsTree>)>,
    /// Determine queries per level; level 0 counts the interval read.
    level_costs: Vec<u64>,
    output: Option<BitString>,
}

impl LogNPeer {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn level_costs(&self) -> &[u64] {
        &self.level_costs
    }

    pub fn levels(&self) -> u32 {
        self.layout.top_level() + 1
    }
}

pub fn logn_peers(cfg: &SimConfig) -> Result<Vec<LogNPeer>, SimError> {
    let layout = logn_layout(cfg)?;
    let cache = shared_tally();
    Ok(PeerId::all(cfg.k)
        .map(|_| LogNPeer {
            n: cfg.n,
            layout,
            gamma_k: cfg.honest_floor(),
            cache: cache.clone(),
            last_claim: None,
            pick: 0,
            children: Vec::new(),
            level_costs: Vec::new(),
            output: None,
        })
        .collect())
}

/// Level i is broadcast in round i+1, except the top level.
pub fn logn_flood_plan(cfg: &SimConfig) -> Result<FloodPlan, SimError> {
    let layout = logn_layout(cfg)?;
    let gk = cfg.honest_floor();
    let rounds = (0..layout.top_level())
        .map(|i| Some((i, level_threshold(&layout, gk, i))))
        .collect();
    Ok(FloodPlan { layout, rounds })
}

impl SyncPeer for LogNPeer {
    type Msg = Claim;

    fn on_query(&mut self, ctx: &mut QueryCtx<'_, Claim>) -> Result<(), SimError> {
        let level = (ctx.round - 1) as u32;
        if level > self.layout.top_level() || self.output.is_some() {
            return Ok(());
        }
        self.pick = ctx.rng.gen_range(1..=self.layout.count(level));
        self.children.clear();
        if level == 0 {
            let (start, len) = self.layout.interval(0, self.pick).expect("pick in range");
            ctx.query_range(start + 1, len);
            self.level_costs.push(len as u64);
            return Ok(());
        }
        let below = level - 1;
        let tally = tally_for(&self.cache, ctx.round, &self.layout, ctx.inbox);
        let t = level_threshold(&self.layout, self.gamma_k, below);
        let mut cost = 0u64;
        let mut sizes = Vec::new();
        for u in [2 * self.pick - 1, 2 * self.pick] {
            let Some((start, _)) = self.layout.interval(below, u) else { continue };
            let own = self
                .last_claim
                .as_ref()
                .filter(|c| c.level == below && c.id as usize == u)
                .map(|c| &c.bits);
            let fst = tally.fs_tree(below, u as u32, t, own)?;
            fst.plan_queries(start, |q| ctx.query(q));
            cost += fst.cost() as u64;
            sizes.push(fst.fs.len());
            self.children.push((start, fst));
        }
        self.level_costs.push(cost);
        ctx.note(json!({"level": level, "fs_sizes": sizes}));
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut MessageCtx<'_, Claim>) -> Result<(), SimError> {
        let level = (ctx.round - 1) as u32;
        let top = self.layout.top_level();
        if level > top || self.output.is_some() {
            return Ok(());
        }
        let (start, len) = self.layout.interval(level, self.pick).expect("pick in range");
        let bits = if level == 0 {
            ctx.answers
                .range(start + 1)
                .cloned()
                .ok_or_else(|| SimError::invariant("level-0 interval was not answered"))?
        } else {
            let mut s = BitString::zeros(len);
            for (child_start, fst) in &self.children {
                let part = fst.resolve(*child_start, ctx.answers)?;
                s.splice(child_start - start, &part);
            }
            s
        };
        if level == top {
            debug_assert_eq!(bits.len(), self.n);
            self.output = Some(bits);
        } else {
            let claim = Claim {
                level,
                id: self.pick as u32,
                bits,
            };
            self.last_claim = Some(claim.clone());
            ctx.send_all(claim);
        }
        Ok(())
    }

    fn output(&self) -> Option<&BitString> {
        self.output.as_ref()
    }
}
