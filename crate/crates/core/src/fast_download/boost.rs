//! Interval doubling with a boosting loop after every level, for the
//! broadcast model.
//!
//! Level i runs a main round, where every peer determines a random level-i
//! interval and broadcasts it, then boosting rounds j = 0..=⌈lg K_i⌉. In
//! boosting round j a peer reads the strings broadcast in the round before,
//! labels every interval ℓ still in U with |FS(S(ℓ), 2^j·t_i)| ≤ 4/γ, keeps
//! that candidate set for the next level, and determines a random interval
//! from what is left of U. Since every peer reads the same broadcasts, U and
//! the labels are the same everywhere.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use rand::seq::IteratorRandom;
use serde::Serialize;
use serde_json::json;

use super::scheme::{level_threshold, phi_for, shared_tally, tally_for, Claim, FloodPlan, FsTree, Layout, SharedTally};
use crate::bits::BitString;
use crate::error::SimError;
use crate::model::{ceil_log2, PeerId, Ratio, SimConfig};
use crate::sync_sim::{Answers, MessageCtx, QueryCtx, SyncPeer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Step {
    Main { level: u32 },
    Boost { level: u32, j: u32 },
}

/// φ = ⌈(n/γk)·8(c+2)·ln n⌉.
pub fn boosted_layout(cfg: &SimConfig) -> Result<Layout, SimError> {
    let c = super::scheme::c_constant(cfg);
    Layout::new(cfg.n, phi_for(cfg, 8.0 * (c + 2.0))?)
}

/// Round r runs entry r−1.
pub fn schedule(layout: &Layout) -> Vec<Step> {
    let top = layout.top_level();
    let mut steps = Vec::new();
    for level in 0..=top {
        steps.push(Step::Main { level });
        if level < top {
            for j in 0..=ceil_log2(layout.count(level) as u64) {
                steps.push(Step::Boost { level, j });
            }
        }
    }
    steps
}

/// |U| right after the removals of boosting iteration j on a level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UStat {
    pub level: u32,
    pub j: u32,
    pub remaining: usize,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct BoostedPeer {
    n: usize,
    layout: Layout,
    gamma_k: usize,
    /// 4/γ.
    overload: Ratio,
    steps: Rc<Vec<Step>>,
    cache: SharedTally,
    u: BTreeSet<u32>,
    labels: Vec<BTreeMap<u32, u32>>,
    frozen_prev: BTreeMap<u32, Rc<FsTree>>,
    frozen_cur: BTreeMap<u32, Rc<FsTree>>,
    pick: Option<(u32, usize)>,
    children: Vec<(usize, Rc<FsTree>)>,
    u_history: Vec<UStat>,
    /// (level, queries) for every sub-interval determined from a frozen set.
    determine_costs: Vec<(u32, u64)>,
    output: Option<BitString>,
}

impl BoostedPeer {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn u_history(&self) -> &[UStat] {
        &self.u_history
    }

    /// j(ℓ) for every interval, per level.
    pub fn labels(&self) -> &[BTreeMap<u32, u32>] {
        &self.labels
    }

    pub fn determine_costs(&self) -> &[(u32, u64)] {
        &self.determine_costs
    }

    pub fn overload(&self) -> Ratio {
        self.overload
    }

    fn step(&self, round: u64) -> Option<Step> {
        self.steps.get((round - 1) as usize).copied()
    }

    /// Queues the queries that determine level-`level` interval `id`.
    fn plan_determine(&mut self, ctx: &mut QueryCtx<'_, Claim>, level: u32, id: usize) -> Result<(), SimError> {
        self.children.clear();
        self.pick = Some((level, id));
        if level == 0 {
            let (start, len) = self.layout.interval(0, id).expect("id in range");
            ctx.query_range(start + 1, len);
            return Ok(());
        }
        let below = level - 1;
        for u in [2 * id - 1, 2 * id] {
            let Some((start, _)) = self.layout.interval(below, u) else { continue };
            let fst = match self.frozen_prev.get(&(u as u32)) {
                Some(f) => f.clone(),
                None if self.labels[below as usize].contains_key(&(u as u32)) => {
                    return Err(SimError::Inconsistency(format!(
                        "interval {u} on level {below} was labeled with no candidate"
                    )))
                }
                None => {
                    return Err(SimError::invariant(format!(
                        "interval {u} on level {below} was never labeled"
                    )))
                }
            };
            fst.plan_queries(start, |q| ctx.query(q));
            self.determine_costs.push((level, fst.cost() as u64));
            self.children.push((start, fst));
        }
        Ok(())
    }

    fn finish_determine(&mut self, answers: &Answers) -> Result<Option<(u32, usize, BitString)>, SimError> {
        let Some((level, id)) = self.pick.take() else {
            return Ok(None);
        };
        let (start, len) = self.layout.interval(level, id).expect("id in range");
        let bits = if level == 0 {
            answers
                .range(start + 1)
                .cloned()
                .ok_or_else(|| SimError::invariant("level-0 interval was not answered"))?
        } else {
            let mut s = BitString::zeros(len);
            for (child_start, fst) in &self.children {
                s.splice(child_start - start, &fst.resolve(*child_start, answers)?);
            }
            s
        };
        Ok(Some((level, id, bits)))
    }
}

pub fn boosted_peers(cfg: &SimConfig) -> Result<Vec<BoostedPeer>, SimError> {
    let layout = boosted_layout(cfg)?;
    let steps = Rc::new(schedule(&layout));
    let cache = shared_tally();
    let overload = Ratio::from_integer(4) / cfg.gamma();
    Ok(PeerId::all(cfg.k)
        .map(|_| BoostedPeer {
            n: cfg.n,
            layout,
            gamma_k: cfg.honest_floor(),
            overload,
            steps: steps.clone(),
            cache: cache.clone(),
            u: BTreeSet::new(),
            labels: Vec::new(),
            frozen_prev: BTreeMap::new(),
            frozen_cur: BTreeMap::new(),
            pick: None,
            children: Vec::new(),
            u_history: Vec::new(),
            determine_costs: Vec::new(),
            output: None,
        })
        .collect())
}

pub fn boosted_flood_plan(cfg: &SimConfig) -> Result<FloodPlan, SimError> {
    let layout = boosted_layout(cfg)?;
    let gk = cfg.honest_floor();
    let top = layout.top_level();
    let rounds = schedule(&layout)
        .into_iter()
        .map(|s| match s {
            Step::Main { level } if level < top => Some((level, level_threshold(&layout, gk, level))),
            Step::Main { .. } => None,
            Step::Boost { level, j } => Some((level, level_threshold(&layout, gk, level) * Ratio::from_integer(1 << j))),
        })
        .collect();
    Ok(FloodPlan { layout, rounds })
}

impl SyncPeer for BoostedPeer {
    type Msg = Claim;

    fn on_query(&mut self, ctx: &mut QueryCtx<'_, Claim>) -> Result<(), SimError> {
        let Some(step) = self.step(ctx.round) else { return Ok(()) };
        match step {
            Step::Main { level } => {
                if level > 0 {
                    self.frozen_prev = std::mem::take(&mut self.frozen_cur);
                }
                let count = self.layout.count(level);
                self.u = (1..=count as u32).collect();
                self.labels.push(BTreeMap::new());
                let id = (1..=count).choose(ctx.rng).expect("at least one interval");
                self.plan_determine(ctx, level, id)?;
            }
            Step::Boost { level, j } => {
                let tally = tally_for(&self.cache, ctx.round, &self.layout, ctx.inbox);
                let t = level_threshold(&self.layout, self.gamma_k, level) * Ratio::from_integer(1 << j);
                let mut removed = Vec::new();
                for &id in &self.u {
                    let size = tally.fs_size(level, id, t)?;
                    if Ratio::from_integer(size as i64) <= self.overload {
                        removed.push(id);
                    }
                }
                for id in &removed {
                    self.u.remove(id);
                    self.labels[level as usize].insert(*id, j);
                    // An empty set is kept as a failure to report when used.
                    if let Ok(fst) = tally.fs_tree(level, *id, t, None) {
                        self.frozen_cur.insert(*id, fst);
                    }
                }
                let count = self.layout.count(level);
                self.u_history.push(UStat {
                    level,
                    j,
                    remaining: self.u.len(),
                    count,
                });
                ctx.note(json!({"level": level, "j": j, "u": self.u.len()}));
                let last = ceil_log2(count as u64);
                if j == last && !self.u.is_empty() {
                    return Err(SimError::invariant(format!(
                        "{} intervals on level {level} still overloaded after {} boosting iterations",
                        self.u.len(),
                        last + 1
                    )));
                }
                if let Some(&id) = self.u.iter().choose(ctx.rng) {
                    self.plan_determine(ctx, level, id as usize)?;
                }
            }
        }
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut MessageCtx<'_, Claim>) -> Result<(), SimError> {
        let Some((level, id, bits)) = self.finish_determine(ctx.answers)? else {
            return Ok(());
        };
        if level == self.layout.top_level() {
            debug_assert_eq!(bits.len(), self.n);
            self.output = Some(bits);
        } else {
            ctx.send_all(Claim {
                level,
                id: id as u32,
                bits,
            });
        }
        Ok(())
    }

    fn output(&self) -> Option<&BitString> {
        self.output.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_has_boosting_below_the_top() {
        let l = Layout::new(64, 16).unwrap();
        let s = schedule(&l);
        // K = 4, 2, 1: 1+3, 1+2, 1.
        assert_eq!(s.len(), 8);
        assert_eq!(s[0], Step::Main { level: 0 });
        assert_eq!(s[3], Step::Boost { level: 0, j: 2 });
        assert_eq!(s[7], Step::Main { level: 2 });
    }
}
