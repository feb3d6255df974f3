//! Fault plans: who is corrupt when, who crashes where, how long messages take.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Zero};
use rand::seq::index::sample;
use rand::{Rng, RngCore};

use crate::error::SimError;
use crate::metrics::Recipients;
use crate::model::{PeerId, Ratio, SimConfig};
use crate::rng::{derive, stream};
use crate::source::SubRound;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultKind {
    None,
    FixedByzantine,
    DynamicByzantine,
    Crash,
    AsyncDelay,
}

/// Corrupt set as a function of the round.
#[derive(Clone, Debug, PartialEq)]
pub enum CorruptSchedule {
    None,
    /// The same set in every round.
    Fixed(BTreeSet<PeerId>),
    /// A fresh uniformly random set of `size` peers each round, derived from
    /// `seed` and the round number.
    Dynamic { size: usize, seed: u64 },
    /// Explicit per-round sets; round r uses entry r−1, the last entry repeats.
    Scripted(Vec<BTreeSet<PeerId>>),
}

impl CorruptSchedule {
    pub fn at(&self, round: u64, k: usize) -> BTreeSet<PeerId> {
        match self {
            CorruptSchedule::None => BTreeSet::new(),
            CorruptSchedule::Fixed(set) => set.clone(),
            CorruptSchedule::Dynamic { size, seed } => {
                let mut rng = stream(derive(*seed, round));
                sample(&mut rng, k, (*size).min(k))
                    .into_iter()
                    .map(PeerId::from_index)
                    .collect()
            }
            CorruptSchedule::Scripted(sets) => {
                if sets.is_empty() {
                    return BTreeSet::new();
                }
                let i = ((round.max(1) - 1) as usize).min(sets.len() - 1);
                sets[i].clone()
            }
        }
    }

    /// Largest set the schedule can produce.
    pub fn max_size(&self) -> usize {
        match self {
            CorruptSchedule::None => 0,
            CorruptSchedule::Fixed(s) => s.len(),
            CorruptSchedule::Dynamic { size, .. } => *size,
            CorruptSchedule::Scripted(v) => v.iter().map(BTreeSet::len).max().unwrap_or(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.max_size() == 0
    }
}

/// Where a peer stops. `delivered` lists the recipients that still get the
/// sends of the interrupted step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CrashPoint {
    Sync {
        round: u64,
        subround: SubRound,
        delivered: BTreeSet<PeerId>,
    },
    /// Crash while handling the `batch`-th event of this peer (0 is the
    /// start-up step).
    Async {
        batch: u64,
        delivered: BTreeSet<PeerId>,
    },
}

impl CrashPoint {
    pub fn silent_sync(round: u64) -> Self {
        CrashPoint::Sync {
            round,
            subround: SubRound::Query,
            delivered: BTreeSet::new(),
        }
    }

    pub fn delivered(&self) -> &BTreeSet<PeerId> {
        match self {
            CrashPoint::Sync { delivered, .. } | CrashPoint::Async { delivered, .. } => delivered,
        }
    }
}

/// Keeps only the recipients in `delivered`.
pub fn crash_cut(recipients: &Recipients, delivered: &BTreeSet<PeerId>, k: usize) -> Recipients {
    match recipients {
        Recipients::All => Recipients::Set(
            PeerId::all(k).filter(|p| delivered.contains(p)).collect(),
        ),
        Recipients::One(p) => {
            if delivered.contains(p) {
                Recipients::One(*p)
            } else {
                Recipients::Set(Vec::new())
            }
        }
        Recipients::Set(v) => {
            Recipients::Set(v.iter().copied().filter(|p| delivered.contains(p)).collect())
        }
    }
}

/// Per-message delay policy for asynchronous runs.
#[derive(Clone, Debug, PartialEq)]
pub enum DelayPolicy {
    /// Every message takes the maximum delay 1.
    Unit,
    Constant(Ratio),
    /// Delay j/`steps` with j uniform in 1..=steps.
    Uniform { steps: i64 },
    /// Messages from `slow` peers take `slow_delay`, all others `fast_delay`.
    SlowSenders {
        slow: BTreeSet<PeerId>,
        slow_delay: Ratio,
        fast_delay: Ratio,
    },
    /// Delays taken in order, the last one repeating. For tests.
    Scripted(Vec<Ratio>),
}

impl DelayPolicy {
    /// Delay of the `seq`-th message, from `sender` to `recipient`.
    pub fn delay(
        &self,
        sender: PeerId,
        _recipient: PeerId,
        seq: u64,
        rng: &mut dyn RngCore,
    ) -> Ratio {
        match self {
            DelayPolicy::Unit => Ratio::one(),
            DelayPolicy::Constant(d) => *d,
            DelayPolicy::Uniform { steps } => {
                let j = rng.gen_range(1..=*steps);
                Ratio::new(j, *steps)
            }
            DelayPolicy::SlowSenders {
                slow,
                slow_delay,
                fast_delay,
            } => {
                if slow.contains(&sender) {
                    *slow_delay
                } else {
                    *fast_delay
                }
            }
            DelayPolicy::Scripted(v) => {
                if v.is_empty() {
                    Ratio::one()
                } else {
                    v[(seq as usize).min(v.len() - 1)]
                }
            }
        }
    }

    pub fn is_valid_delay(d: Ratio) -> bool {
        d > Ratio::zero() && d <= Ratio::one()
    }
}

/// Named Byzantine behavior; protocols map it onto a concrete strategy.
#[derive(Clone, Debug, PartialEq)]
pub enum Behavior {
    Silent,
    Contrarian,
    /// All corrupt peers push `variants` fabricated strings for `target`
    /// (1-based interval id, interpreted per level/iteration).
    IntervalFlood { target: usize, variants: usize },
}

/// Complete adversary schedule for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultPlan {
    pub kind: FaultKind,
    pub budget: usize,
    pub corrupt: CorruptSchedule,
    pub crashes: BTreeMap<PeerId, CrashPoint>,
    pub behavior: Behavior,
    pub delay: DelayPolicy,
}

impl FaultPlan {
    pub fn none() -> Self {
        FaultPlan {
            kind: FaultKind::None,
            budget: 0,
            corrupt: CorruptSchedule::None,
            crashes: BTreeMap::new(),
            behavior: Behavior::Silent,
            delay: DelayPolicy::Unit,
        }
    }

    pub fn fixed(corrupt: BTreeSet<PeerId>, behavior: Behavior) -> Self {
        FaultPlan {
            kind: FaultKind::FixedByzantine,
            budget: corrupt.len(),
            corrupt: CorruptSchedule::Fixed(corrupt),
            crashes: BTreeMap::new(),
            behavior,
            delay: DelayPolicy::Unit,
        }
    }

    pub fn dynamic(size: usize, seed: u64, behavior: Behavior) -> Self {
        FaultPlan {
            kind: FaultKind::DynamicByzantine,
            budget: size,
            corrupt: CorruptSchedule::Dynamic { size, seed },
            crashes: BTreeMap::new(),
            behavior,
            delay: DelayPolicy::Unit,
        }
    }

    pub fn crashes(crashes: BTreeMap<PeerId, CrashPoint>) -> Self {
        FaultPlan {
            kind: FaultKind::Crash,
            budget: crashes.len(),
            corrupt: CorruptSchedule::None,
            crashes,
            behavior: Behavior::Silent,
            delay: DelayPolicy::Unit,
        }
    }

    pub fn with_delay(mut self, delay: DelayPolicy) -> Self {
        self.delay = delay;
        if self.kind == FaultKind::None {
            self.kind = FaultKind::AsyncDelay;
        }
        self
    }

    /// Checks the plan against the run's fault budget ⌊βk⌋.
    pub fn validate(&self, cfg: &SimConfig) -> Result<(), SimError> {
        let limit = cfg.budget();
        if self.budget > limit {
            return Err(SimError::config(format!(
                "plan budget {} exceeds floor(beta*k) = {limit}",
                self.budget
            )));
        }
        if self.corrupt.max_size() > self.budget {
            return Err(SimError::config(format!(
                "corrupt sets of size {} exceed the plan budget {}",
                self.corrupt.max_size(),
                self.budget
            )));
        }
        if self.crashes.len() > self.budget {
            return Err(SimError::config(format!(
                "{} crashing peers exceed the plan budget {}",
                self.crashes.len(),
                self.budget
            )));
        }
        let in_range = |p: &PeerId| p.index() < cfg.k;
        let sets_ok = match &self.corrupt {
            CorruptSchedule::Fixed(s) => s.iter().all(in_range),
            CorruptSchedule::Scripted(v) => v.iter().all(|s| s.iter().all(in_range)),
            _ => true,
        };
        if !sets_ok || !self.crashes.keys().all(in_range) {
            return Err(SimError::config("fault plan names a peer outside 1..=k"));
        }
        match &self.delay {
            DelayPolicy::Constant(d) if !DelayPolicy::is_valid_delay(*d) => {
                return Err(SimError::DelayValidity { delay: d.to_string() })
            }
            DelayPolicy::SlowSenders { slow_delay, fast_delay, .. } => {
                for d in [slow_delay, fast_delay] {
                    if !DelayPolicy::is_valid_delay(*d) {
                        return Err(SimError::DelayValidity { delay: d.to_string() });
                    }
                }
            }
            DelayPolicy::Uniform { steps } if *steps < 1 => {
                return Err(SimError::config("uniform delay needs at least one step"))
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProtocolId;

    fn ids(v: &[u32]) -> BTreeSet<PeerId> {
        v.iter().map(|&i| PeerId::new(i)).collect()
    }

    #[test]
    fn fixed_schedule_is_constant() {
        let s = CorruptSchedule::Fixed(ids(&[2, 5]));
        for r in 1..20 {
            assert_eq!(s.at(r, 8), ids(&[2, 5]));
        }
    }

    #[test]
    fn dynamic_schedule_respects_size_and_is_reproducible() {
        let s = CorruptSchedule::Dynamic { size: 3, seed: 11 };
        let mut distinct = BTreeSet::new();
        for r in 1..30 {
            let set = s.at(r, 10);
            assert_eq!(set.len(), 3);
            assert_eq!(set, s.at(r, 10));
            distinct.insert(set);
        }
        assert!(distinct.len() > 1);
    }

    #[test]
    fn crash_cut_keeps_only_delivered() {
        let d = ids(&[2]);
        assert_eq!(
            crash_cut(&Recipients::All, &d, 4),
            Recipients::Set(vec![PeerId::new(2)])
        );
        assert_eq!(
            crash_cut(&Recipients::One(PeerId::new(3)), &d, 4),
            Recipients::Set(vec![])
        );
        let all = ids(&[1, 2, 3, 4]);
        assert_eq!(
            crash_cut(&Recipients::All, &all, 4),
            Recipients::Set(PeerId::all(4).collect())
        );
    }

    #[test]
    fn budget_is_enforced() {
        let cfg = SimConfig::new(ProtocolId::Alg1, 64, 8, Ratio::new(1, 4), 0);
        assert!(FaultPlan::fixed(ids(&[1, 2]), Behavior::Silent).validate(&cfg).is_ok());
        assert!(FaultPlan::fixed(ids(&[1, 2, 3]), Behavior::Silent).validate(&cfg).is_err());
    }

    #[test]
    fn zero_delay_is_rejected() {
        let cfg = SimConfig::new(ProtocolId::AsyncOneCrash, 12, 4, Ratio::new(1, 4), 0);
        let plan = FaultPlan::none().with_delay(DelayPolicy::Constant(Ratio::zero()));
        assert!(matches!(plan.validate(&cfg), Err(SimError::DelayValidity { .. })));
    }
}
