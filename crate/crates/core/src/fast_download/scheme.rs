//! Interval layouts, claim messages and the per-round tally of claims.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use num_traits::ToPrimitive;
use serde::Serialize;

use crate::adversaries::strategies::FloodTarget;
use crate::bits::BitString;
use crate::error::SimError;
use crate::metrics::field_bits;
use crate::model::{ceil_log2, PeerId, Ratio, SimConfig};
use crate::sifting::{build_decision_tree, frequent_strings, DecisionTree, StringMultiset};
use crate::sync_sim::{Answers, Inbox, Payload, Wire};

/// ⟨ℓ, s, i⟩: the string `bits` for interval `id` on `level`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Claim {
    pub level: u32,
    pub id: u32,
    pub bits: BitString,
}

impl Payload for Claim {
    fn payload_bits(&self, wire: Wire) -> u64 {
        let levels = ceil_log2(wire.n as u64) as u64 + 1;
        field_bits(levels) + field_bits(wire.n as u64) + self.bits.len() as u64
    }
}

/// Contiguous intervals of width φ·2^level over `1..=n`; the last one on a
/// level may be short.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub n: usize,
    pub phi: usize,
}

impl Layout {
    pub fn new(n: usize, phi: usize) -> Result<Self, SimError> {
        if phi == 0 || phi > n {
            return Err(SimError::config(format!("interval width {phi} outside 1..={n}")));
        }
        Ok(Layout { n, phi })
    }

    pub fn width(&self, level: u32) -> usize {
        self.phi.saturating_mul(1usize.checked_shl(level).unwrap_or(usize::MAX))
    }

    /// K_i = ⌈n/φ_i⌉.
    pub fn count(&self, level: u32) -> usize {
        self.n.div_ceil(self.width(level))
    }

    /// Highest level, ⌈lg K⌉; it has a single interval.
    pub fn top_level(&self) -> u32 {
        ceil_log2(self.count(0) as u64)
    }

    /// 0-based start and width of interval `id` (1-based) on `level`.
    pub fn interval(&self, level: u32, id: usize) -> Option<(usize, usize)> {
        if id == 0 || id > self.count(level) {
            return None;
        }
        let w = self.width(level);
        let start = (id - 1) * w;
        Some((start, w.min(self.n - start)))
    }
}

fn ln(x: usize) -> f64 {
    (x as f64).ln()
}

/// The constant `c` of the failure probability 1/n^c.
pub fn c_constant(cfg: &SimConfig) -> f64 {
    cfg.constant("c", Ratio::from_integer(1)).to_f64().unwrap_or(1.0)
}

/// φ = ⌈(n/γk)·m·ln n⌉ capped at n, or the `phi` constant when set.
pub fn phi_for(cfg: &SimConfig, multiplier: f64) -> Result<usize, SimError> {
    if let Some(p) = cfg.constants.get("phi") {
        if !p.is_integer() || *p < Ratio::from_integer(1) {
            return Err(SimError::config("phi must be a positive integer"));
        }
        return Ok((p.to_integer() as usize).min(cfg.n));
    }
    let gk = cfg.honest_floor() as f64;
    let raw = (cfg.n as f64 / gk) * multiplier * ln(cfg.n);
    Ok((raw.ceil().max(1.0) as usize).min(cfg.n))
}

/// What the two-round protocol does for a given size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum TwoRoundPlan {
    QueryAll,
    Split {
        phi: usize,
        count: usize,
        #[serde(serialize_with = "ser_ratio")]
        t: Ratio,
    },
}

fn ser_ratio<S: serde::Serializer>(r: &Ratio, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

/// Width selection for the two-round protocol; `gamma_k` is the honest
/// floor k − ⌊βk⌋.
pub fn select_phi_2round(n: usize, k: usize, gamma: Ratio, gamma_k: usize, c: f64) -> TwoRoundPlan {
    let g = gamma.to_f64().unwrap_or(1.0);
    let lnn = ln(n);
    if (gamma_k as f64) < 64.0 * c * lnn {
        return TwoRoundPlan::QueryAll;
    }
    let root = (2.0 * n as f64 / g).sqrt();
    let phi = if k as f64 >= 12.0 * c * lnn * root {
        (16.0 * root).ceil()
    } else {
        (32.0 * c * lnn * n as f64 / gamma_k as f64).ceil()
    };
    let phi = (phi.max(1.0) as usize).min(n);
    let count = n.div_ceil(phi);
    TwoRoundPlan::Split {
        phi,
        count,
        t: Ratio::new(gamma_k as i64, 2 * count as i64),
    }
}

pub fn two_round_plan(cfg: &SimConfig) -> TwoRoundPlan {
    select_phi_2round(cfg.n, cfg.k, cfg.gamma(), cfg.honest_floor(), c_constant(cfg))
}

/// t_i = 2^{i−1}·φ·γk/n, the count a level-i string needs.
pub fn level_threshold(layout: &Layout, gamma_k: usize, level: u32) -> Ratio {
    let num = layout.phi as i64 * gamma_k as i64 * (1i64 << level);
    Ratio::new(num, 2 * layout.n as i64)
}

/// Filtered candidates for one interval and the tree that picks among them.
#[derive(Debug)]
pub struct FsTree {
    pub fs: Vec<BitString>,
    pub tree: DecisionTree,
}

impl FsTree {
    pub fn cost(&self) -> usize {
        self.tree.query_plan().len()
    }

    /// Queues one query per internal node; `start` is the interval's 0-based
    /// offset.
    pub fn plan_queries(&self, start: usize, mut query: impl FnMut(usize)) {
        for &q in self.tree.query_plan() {
            query(start + q + 1);
        }
    }

    pub fn resolve(&self, start: usize, answers: &Answers) -> Result<BitString, SimError> {
        self.tree.resolve(|q| answers.bit(start + q + 1)).cloned()
    }
}

type TreeKey = (u32, u32, Ratio, Option<BitString>);

/// All claims readable in one round, grouped by (level, id). A sender with
/// more than one distinct claim in the round is dropped entirely.
#[derive(Debug, Default)]
pub struct Tally {
    sets: BTreeMap<(u32, u32), StringMultiset>,
    trees: RefCell<HashMap<TreeKey, Rc<FsTree>>>,
}

impl Tally {
    pub fn build(layout: &Layout, inbox: &Inbox<Claim>) -> Self {
        let mut first: BTreeMap<PeerId, Option<&Claim>> = BTreeMap::new();
        for d in inbox.iter() {
            let c = &d.msg;
            let fits = layout
                .interval(c.level, c.id as usize)
                .is_some_and(|(_, w)| w == c.bits.len());
            if !fits {
                continue;
            }
            match first.get(&d.from) {
                None => {
                    first.insert(d.from, Some(c));
                }
                Some(Some(prev)) if *prev != c => {
                    first.insert(d.from, None);
                }
                _ => {}
            }
        }
        let mut sets: BTreeMap<(u32, u32), StringMultiset> = BTreeMap::new();
        for c in first.into_values().flatten() {
            sets.entry((c.level, c.id))
                .or_insert_with(|| StringMultiset::new(c.bits.len()))
                .add(c.bits.clone(), 1)
                .expect("width checked above");
        }
        Tally {
            sets,
            trees: RefCell::new(HashMap::new()),
        }
    }

    pub fn multiset(&self, level: u32, id: u32) -> Option<&StringMultiset> {
        self.sets.get(&(level, id))
    }

    /// FS(S, t) for one interval, not counting `own` once (the caller's
    /// own submission). Empty FS is an inconsistency.
    pub fn fs_tree(&self, level: u32, id: u32, t: Ratio, own: Option<&BitString>) -> Result<Rc<FsTree>, SimError> {
        let empty = StringMultiset::new(0);
        let set = self.sets.get(&(level, id)).unwrap_or(&empty);
        // The own copy only matters when removing it drops a string below t.
        let own = own.filter(|s| {
            let c = set.count(s);
            c > 0 && Ratio::from_integer(c as i64) >= t && Ratio::from_integer(c as i64 - 1) < t
        });
        let key = (level, id, t, own.cloned());
        if let Some(hit) = self.trees.borrow().get(&key) {
            return Ok(hit.clone());
        }
        let mut fs = frequent_strings(set, t)?;
        if let Some(o) = own {
            fs.retain(|s| s != o);
        }
        if fs.is_empty() {
            return Err(SimError::Inconsistency(format!(
                "no string for interval {id} on level {level} reaches threshold {t}"
            )));
        }
        let tree = build_decision_tree(&fs)?;
        let entry = Rc::new(FsTree { fs, tree });
        self.trees.borrow_mut().insert(key, entry.clone());
        Ok(entry)
    }

    /// |FS(S, t)| without building a tree.
    pub fn fs_size(&self, level: u32, id: u32, t: Ratio) -> Result<usize, SimError> {
        match self.sets.get(&(level, id)) {
            Some(set) => Ok(frequent_strings(set, t)?.len()),
            None => Ok(0),
        }
    }
}

/// One tally per round, shared by all peers of a run. Only uniform inboxes
/// (every peer reads the same broadcasts) hit the cache.
#[derive(Debug, Default)]
pub struct TallyCache {
    key: Option<(u64, usize)>,
    tally: Option<Rc<Tally>>,
}

pub type SharedTally = Rc<RefCell<TallyCache>>;

pub fn shared_tally() -> SharedTally {
    Rc::new(RefCell::new(TallyCache::default()))
}

pub fn tally_for(cache: &SharedTally, round: u64, layout: &Layout, inbox: &Inbox<Claim>) -> Rc<Tally> {
    if !inbox.is_uniform() {
        return Rc::new(Tally::build(layout, inbox));
    }
    let key = (round, Rc::as_ptr(inbox.shared_rc()) as usize);
    let mut c = cache.borrow_mut();
    if c.key == Some(key) {
        if let Some(t) = &c.tally {
            return t.clone();
        }
    }
    let t = Rc::new(Tally::build(layout, inbox));
    c.key = Some(key);
    c.tally = Some(t.clone());
    t
}

/// Which level, with which threshold, honest peers broadcast in each round.
#[derive(Clone, Debug)]
pub struct FloodPlan {
    pub layout: Layout,
    /// Entry r−1 describes round r.
    pub rounds: Vec<Option<(u32, Ratio)>>,
}

impl FloodTarget for FloodPlan {
    fn level_at(&self, round: u64) -> Option<(u32, Ratio)> {
        let i = usize::try_from(round).ok()?.checked_sub(1)?;
        self.rounds.get(i).copied().flatten()
    }

    fn interval(&self, level: u32, id: usize) -> Option<(usize, usize)> {
        self.layout.interval(level, id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_covers_input() {
        let l = Layout::new(10, 3).unwrap();
        assert_eq!(l.count(0), 4);
        assert_eq!(l.interval(0, 4), Some((9, 1)));
        assert_eq!(l.count(1), 2);
        assert_eq!(l.interval(1, 2), Some((6, 4)));
        assert_eq!(l.top_level(), 2);
        assert_eq!(l.count(2), 1);
        assert_eq!(l.interval(2, 1), Some((0, 10)));
    }

    #[test]
    fn two_round_sqrt_branch() {
        let plan = select_phi_2round(4096, 20000, Ratio::new(1, 2), 10000, 1.0);
        assert_eq!(
            plan,
            TwoRoundPlan::Split {
                phi: 2048,
                count: 2,
                t: Ratio::from_integer(2500)
            }
        );
    }

    #[test]
    fn two_round_falls_back_below_64_ln_n() {
        let plan = select_phi_2round(4096, 1000, Ratio::new(1, 2), 500, 1.0);
        assert_eq!(plan, TwoRoundPlan::QueryAll);
    }

    #[test]
    fn two_round_linear_branch() {
        let plan = select_phi_2round(4096, 1200, Ratio::from_integer(1), 1200, 1.0);
        let expect = (32.0 * (4096f64).ln() * 4096.0 / 1200.0).ceil() as usize;
        match plan {
            TwoRoundPlan::Split { phi, .. } => assert_eq!(phi, expect),
            other => panic!("unexpected {other:?}"),
        }
    }
}
