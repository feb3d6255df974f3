//! The two-round protocol: read one random interval, broadcast it, then
//! determine every interval from the strings that enough peers reported.

use std::rc::Rc;

use rand::Rng;
use serde_json::json;

use super::scheme::{shared_tally, tally_for, two_round_plan, Claim, FloodPlan, FsTree, Layout, SharedTally, TwoRoundPlan};
use crate::bits::BitString;
use crate::error::SimError;
use crate::model::{PeerId, Ratio, SimConfig};
use crate::sync_sim::{MessageCtx, QueryCtx, SyncPeer};

#[derive(Clone, Debug)]
pub struct TwoRoundPeer {
    n: usize,
    plan: TwoRoundPlan,
    layout: Option<Layout>,
    cache: SharedTally,
    picked: Option<(u32, BitString)>,
    trees: Vec<(usize, Rc<FsTree>)>,
    second_round_queries: u64,
    output: Option<BitString>,
}

impl TwoRoundPeer {
    pub fn plan(&self) -> &TwoRoundPlan {
        &self.plan
    }

    /// Queries spent determining intervals in round 2, Σ(|FS_ℓ| − 1).
    pub fn second_round_queries(&self) -> u64 {
        self.second_round_queries
    }

    /// |FS_ℓ| for every interval, in order.
    pub fn fs_sizes(&self) -> Vec<usize> {
        self.trees.iter().map(|(_, t)| t.fs.len()).collect()
    }

    fn threshold(&self) -> Ratio {
        match self.plan {
            TwoRoundPlan::Split { t, .. } => t,
            TwoRoundPlan::QueryAll => Ratio::from_integer(1),
        }
    }
}

pub fn two_round_peers(cfg: &SimConfig) -> Result<Vec<TwoRoundPeer>, SimError> {
    let plan = two_round_plan(cfg);
    let layout = match plan {
        TwoRoundPlan::Split { phi, .. } => Some(Layout::new(cfg.n, phi)?),
        TwoRoundPlan::QueryAll => None,
    };
    let cache = shared_tally();
    Ok(PeerId::all(cfg.k)
        .map(|_| TwoRoundPeer {
            n: cfg.n,
            plan: plan.clone(),
            layout,
            cache: cache.clone(),
            picked: None,
            trees: Vec::new(),
            second_round_queries: 0,
            output: None,
        })
        .collect())
}

/// Honest peers broadcast level-0 claims in round 1 only.
pub fn two_round_flood_plan(cfg: &SimConfig) -> Option<FloodPlan> {
    match two_round_plan(cfg) {
        TwoRoundPlan::Split { phi, t, .. } => Some(FloodPlan {
            layout: Layout::new(cfg.n, phi).ok()?,
            rounds: vec![Some((0, t))],
        }),
        TwoRoundPlan::QueryAll => None,
    }
}

impl SyncPeer for TwoRoundPeer {
    type Msg = Claim;

    fn on_query(&mut self, ctx: &mut QueryCtx<'_, Claim>) -> Result<(), SimError> {
        let Some(layout) = self.layout else {
            if ctx.round == 1 {
                ctx.query_range(1, self.n);
            }
            return Ok(());
        };
        match ctx.round {
            1 => {
                let id = ctx.rng.gen_range(1..=layout.count(0));
                let (start, len) = layout.interval(0, id).expect("id in range");
                self.picked = Some((id as u32, BitString::zeros(0)));
                ctx.query_range(start + 1, len);
            }
            2 => {
                let tally = tally_for(&self.cache, ctx.round, &layout, ctx.inbox);
                let t = self.threshold();
                for id in 1..=layout.count(0) {
                    let (start, _) = layout.interval(0, id).expect("id in range");
                    let own = self
                        .picked
                        .as_ref()
                        .filter(|(p, _)| *p as usize == id)
                        .map(|(_, s)| s);
                    let fst = tally.fs_tree(0, id as u32, t, own)?;
                    fst.plan_queries(start, |q| ctx.query(q));
                    self.second_round_queries += fst.cost() as u64;
                    self.trees.push((start, fst));
                }
                ctx.note(json!({"fs_sizes": self.fs_sizes()}));
            }
            _ => {}
        }
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut MessageCtx<'_, Claim>) -> Result<(), SimError> {
        if self.layout.is_none() {
            if let Some(bits) = ctx.answers.range(1) {
                self.output = Some(bits.clone());
            }
            return Ok(());
        }
        match ctx.round {
            1 => {
                let (id, _) = self.picked.clone().expect("picked in round 1");
                let layout = self.layout.expect("split plan");
                let (start, _) = layout.interval(0, id as usize).expect("id in range");
                let bits = ctx
                    .answers
                    .range(start + 1)
                    .cloned()
                    .ok_or_else(|| SimError::invariant("round-1 interval was not answered"))?;
                self.picked = Some((id, bits.clone()));
                ctx.send_all(Claim { level: 0, id, bits });
            }
            2 => {
                let mut out = BitString::zeros(self.n);
                for (start, fst) in &self.trees {
                    let s = fst.resolve(*start, ctx.answers)?;
                    out.splice(*start, &s);
                }
                self.output = Some(out);
            }
            _ => {}
        }
        Ok(())
    }

    fn output(&self) -> Option<&BitString> {
        self.output.as_ref()
    }
}
