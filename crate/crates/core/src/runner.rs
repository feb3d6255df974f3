//! One run from a configuration. The input and the fault plan are drawn
//! from the seed, the peers are built for the protocol and the matching
//! scheduler runs them. Protocol-specific measures come back by name so
//! that sweeps can check bounds on them.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use rand::seq::index::sample;
use rand::Rng;

use crate::adversaries::{Behavior, CorruptSchedule, CrashPoint, DelayPolicy, FaultPlan};
use crate::adversaries::strategies::IntervalFlood;
use crate::async_sim::{no_async_observer, run_async, AsyncOutcome};
use crate::byz_download::{alg1_peers, alg1_plan, contrarian_for, Alg1Peer, Alg1Plan};
use crate::crash_async::{f_crash_peers, one_crash_peers, phase_cap, FCrashPeer};
use crate::crash_sync::{rapid_peers, static_peers, RapidPeer, StaticPeer};
use crate::error::SimError;
use crate::event::EventLog;
use crate::fast_download::{
    boosted_flood_plan, boosted_layout, boosted_peers, compress_all, logn_flood_plan, logn_peers, schedule, two_round_flood_plan,
    two_round_peers, two_round_plan, BoostedPeer, FloodPlan, LogNPeer, TwoRoundPeer, TwoRoundPlan,
};
use crate::metrics::RunMetrics;
use crate::model::{AdversaryId, CommMode, InputVector, PeerId, ProtocolId, Ratio, SimConfig, Timing};
use crate::rng::{derive, input_stream, stream};
use crate::source::SubRound;
use crate::sync_sim::{no_observer, run_sync, ByzantineStrategy, PeerStatus, Silent, SyncObserver, SyncOutcome};
use crate::trivial::query_all_peers;

const TAG_PLAN: u64 = 0x706c_616e;

pub type Extras = BTreeMap<String, f64>;

pub struct RunReport {
    pub metrics: RunMetrics,
    /// Protocol-specific measures, by name.
    pub extras: Extras,
    pub log: EventLog,
}

pub fn random_input(cfg: &SimConfig) -> InputVector {
    InputVector::random(cfg.n, &mut input_stream(cfg.seed))
}

/// Peers that crash under the crash adversaries: one for the single-crash
/// protocol, f for the f-crash protocol, the budget otherwise. The
/// `crashes` constant overrides this.
pub fn crash_count(cfg: &SimConfig) -> usize {
    let budget = cfg.budget();
    if let Some(c) = cfg.constants.get("crashes") {
        return (c.to_integer().max(0) as usize).min(budget);
    }
    match cfg.protocol {
        ProtocolId::AsyncOneCrash => budget.min(1),
        ProtocolId::AsyncFCrash => match cfg.constants.get("f") {
            Some(f) => (f.to_integer().max(0) as usize).min(budget),
            None => budget,
        },
        _ => budget,
    }
}

/// Rounds a synchronous protocol needs without faults, plus the extra a
/// crash schedule can add. Random crashes are placed within this horizon.
pub fn nominal_rounds(cfg: &SimConfig) -> u64 {
    let (n, f) = (cfg.n as u64, cfg.budget() as u64);
    match cfg.protocol {
        ProtocolId::QueryAll => 1,
        ProtocolId::Alg1 => match alg1_plan(cfg) {
            Ok(Alg1Plan::Run(p)) => n * p.rounds_per_epoch(),
            _ => 1,
        },
        ProtocolId::TwoRound => 2,
        ProtocolId::LogN => logn_peers(cfg).map_or(1, |p| p[0].levels() as u64),
        ProtocolId::Boosted => boosted_layout(cfg).map_or(1, |l| schedule(&l).len() as u64),
        ProtocolId::StaticCrash => (n + f) * (f + 1),
        ProtocolId::RapidCrash => 2 * (n + f),
        ProtocolId::AsyncOneCrash | ProtocolId::AsyncFCrash => 1,
    }
}

fn flood_behavior(cfg: &SimConfig) -> Behavior {
    let target = cfg.constant("target", Ratio::from_integer(1)).to_integer().max(1) as usize;
    let variants = cfg.constant("variants", Ratio::from_integer(0)).to_integer().max(0) as usize;
    Behavior::IntervalFlood { target, variants }
}

fn random_set(k: usize, size: usize, rng: &mut impl Rng) -> BTreeSet<PeerId> {
    sample(rng, k, size.min(k)).into_iter().map(PeerId::from_index).collect()
}

fn random_subset(k: usize, rng: &mut impl Rng) -> BTreeSet<PeerId> {
    PeerId::all(k).filter(|_| rng.gen_bool(0.5)).collect()
}

/// The fault plan the adversary id names for this config.
pub fn fault_plan(cfg: &SimConfig) -> Result<FaultPlan, SimError> {
    let mut rng = stream(derive(cfg.seed, TAG_PLAN));
    let k = cfg.k;
    let budget = cfg.budget();
    let is_flood = matches!(cfg.protocol, ProtocolId::TwoRound | ProtocolId::LogN | ProtocolId::Boosted);
    let is_async = cfg.timing == Timing::Asynchronous;
    let byzantine = |id: AdversaryId| {
        if cfg.protocol.crash_only() {
            return Err(SimError::config(format!("{} tolerates crashes only, not `{id}`", cfg.protocol)));
        }
        Ok(())
    };
    let plan = match cfg.adversary {
        AdversaryId::None => FaultPlan::none(),
        AdversaryId::Contrarian => {
            byzantine(cfg.adversary)?;
            if cfg.protocol != ProtocolId::Alg1 {
                return Err(SimError::config("the contrarian adversary targets alg1"));
            }
            FaultPlan::fixed(random_set(k, budget, &mut rng), Behavior::Contrarian)
        }
        AdversaryId::IntervalFlood | AdversaryId::DynamicFlood => {
            byzantine(cfg.adversary)?;
            if !is_flood {
                return Err(SimError::config(format!("`{}` targets the interval protocols", cfg.adversary)));
            }
            if cfg.adversary == AdversaryId::IntervalFlood {
                FaultPlan::fixed(random_set(k, budget, &mut rng), flood_behavior(cfg))
            } else {
                FaultPlan::dynamic(budget, rng.gen(), flood_behavior(cfg))
            }
        }
        AdversaryId::SilentCrash => {
            let at = if is_async {
                CrashPoint::Async { batch: 0, delivered: BTreeSet::new() }
            } else {
                CrashPoint::silent_sync(1)
            };
            let who = random_set(k, crash_count(cfg), &mut rng);
            FaultPlan::crashes(who.into_iter().map(|p| (p, at.clone())).collect())
        }
        AdversaryId::RandomCrash => {
            let who = random_set(k, crash_count(cfg), &mut rng);
            let horizon = nominal_rounds(cfg).max(1);
            let mut crashes = BTreeMap::new();
            for p in who {
                let delivered = random_subset(k, &mut rng);
                let at = if is_async {
                    CrashPoint::Async {
                        batch: rng.gen_range(0..=2 * k as u64),
                        delivered,
                    }
                } else {
                    let subround = [SubRound::Query, SubRound::Response, SubRound::Message][rng.gen_range(0..3)];
                    CrashPoint::Sync {
                        round: rng.gen_range(1..=horizon),
                        subround,
                        delivered,
                    }
                };
                crashes.insert(p, at);
            }
            FaultPlan::crashes(crashes).with_delay(DelayPolicy::Uniform { steps: 8 })
        }
        AdversaryId::SlowDelivery => {
            if !is_async {
                return Err(SimError::config("slow-delivery needs an asynchronous protocol"));
            }
            let slow = random_set(k, crash_count(cfg), &mut rng);
            let fast_delay = cfg.constant("fast_delay", Ratio::new(1, 8));
            FaultPlan::none().with_delay(DelayPolicy::SlowSenders {
                slow,
                slow_delay: Ratio::from_integer(1),
                fast_delay,
            })
        }
    };
    Ok(plan)
}

pub fn run(cfg: &SimConfig) -> Result<RunReport, SimError> {
    let input = random_input(cfg);
    let plan = fault_plan(cfg)?;
    run_with(cfg, &input, &plan)
}

fn flag(ok: bool) -> f64 {
    if ok {
        1.0
    } else {
        0.0
    }
}

fn honest<'a, P>(peers: &'a [P], status: &'a [PeerStatus]) -> impl Iterator<Item = &'a P> {
    peers.iter().zip(status).filter(|(_, s)| **s == PeerStatus::Honest).map(|(p, _)| p)
}

fn sync_report<P>(out: SyncOutcome<P>, extras: Extras) -> RunReport {
    RunReport {
        metrics: out.metrics,
        extras,
        log: out.log,
    }
}

fn async_report<P>(out: AsyncOutcome<P>, mut extras: Extras) -> RunReport {
    extras.insert("events".into(), out.events as f64);
    RunReport {
        metrics: out.metrics,
        extras,
        log: out.log,
    }
}

fn flood_strategy<M>(plan: &FaultPlan, target: Option<FloodPlan>) -> Box<dyn ByzantineStrategy<M>>
where
    IntervalFlood<FloodPlan>: ByzantineStrategy<M>,
    Silent: ByzantineStrategy<M>,
{
    match (&plan.behavior, target) {
        (Behavior::IntervalFlood { target, variants }, Some(fp)) => Box::new(IntervalFlood::new(fp, *target, *variants)),
        _ => Box::new(Silent),
    }
}

/// Runs `cfg` on a given input and fault plan.
pub fn run_with(cfg: &SimConfig, input: &InputVector, plan: &FaultPlan) -> Result<RunReport, SimError> {
    let mut cfg = cfg.clone();
    let f = crash_count(&cfg);
    if cfg.protocol == ProtocolId::StaticCrash && cfg.round_cap.is_none() {
        let v = cfg.budget() as u64;
        let need = (cfg.n as u64 + v + 1) * (v + 1) + 2;
        cfg.round_cap = Some(cfg.round_cap().max(need));
    }
    let cfg = &cfg;
    let mut extras = Extras::new();
    extras.insert("f".into(), f as f64);
    let report = match cfg.protocol {
        ProtocolId::QueryAll => sync_report(
            run_sync(cfg, input, query_all_peers(cfg), plan, &mut Silent, &mut no_observer())?,
            extras,
        ),
        ProtocolId::Alg1 => match alg1_plan(cfg)? {
            Alg1Plan::QueryAll => {
                extras.insert("fallback".into(), 1.0);
                sync_report(
                    run_sync(cfg, input, query_all_peers(cfg), plan, &mut Silent, &mut no_observer())?,
                    extras,
                )
            }
            Alg1Plan::Run(params) => {
                let peers = alg1_peers(cfg, &params);
                if cfg.mode == CommMode::Broadcast {
                    let out = run_sync(cfg, input, compress_all(peers), plan, &mut Silent, &mut no_observer())?;
                    sync_report(out, extras)
                } else {
                    let out = if plan.behavior == Behavior::Contrarian {
                        run_sync(cfg, input, peers, plan, &mut contrarian_for(&params), &mut no_observer())?
                    } else {
                        run_sync(cfg, input, peers, plan, &mut Silent, &mut no_observer())?
                    };
                    alg1_extras(&out, plan, cfg.k, &mut extras);
                    sync_report(out, extras)
                }
            }
        },
        ProtocolId::TwoRound => {
            if let TwoRoundPlan::Split { phi, t, .. } = two_round_plan(cfg) {
                extras.insert("phi".into(), phi as f64);
                extras.insert("threshold".into(), ratio_f64(t));
            }
            let mut byz = flood_strategy(plan, two_round_flood_plan(cfg));
            let out = run_sync(cfg, input, two_round_peers(cfg)?, plan, byz.as_mut(), &mut no_observer())?;
            let second = honest(&out.peers, &out.status).map(TwoRoundPeer::second_round_queries).max().unwrap_or(0);
            extras.insert("second_max".into(), second as f64);
            sync_report(out, extras)
        }
        ProtocolId::LogN => {
            let mut byz = flood_strategy(plan, Some(logn_flood_plan(cfg)?));
            let out = run_sync(cfg, input, logn_peers(cfg)?, plan, byz.as_mut(), &mut no_observer())?;
            logn_extras(&out, &mut extras);
            sync_report(out, extras)
        }
        ProtocolId::Boosted => {
            let mut byz = flood_strategy(plan, Some(boosted_flood_plan(cfg)?));
            let out = run_sync(cfg, input, boosted_peers(cfg)?, plan, byz.as_mut(), &mut no_observer())?;
            boosted_extras(&out, cfg, &mut extras);
            sync_report(out, extras)
        }
        ProtocolId::StaticCrash => {
            let mut watch = StaticWatch::default();
            let out = run_sync(cfg, input, static_peers(cfg), plan, &mut Silent, &mut watch)?;
            let views = honest(&out.peers, &out.status).map(|p| p.trace().len()).max().unwrap_or(0);
            extras.insert("views".into(), views as f64);
            extras.insert("agree_ok".into(), flag(watch.agree));
            extras.insert("suspect_ok".into(), flag(watch.justified));
            sync_report(out, extras)
        }
        ProtocolId::RapidCrash => {
            let mut watch = RapidWatch::new();
            let out = run_sync(cfg, input, rapid_peers(cfg), plan, &mut Silent, &mut watch)?;
            let views = honest(&out.peers, &out.status).map(|p| p.trace().len()).max().unwrap_or(0);
            extras.insert("views".into(), views as f64);
            extras.insert("spread_max".into(), watch.spread as f64);
            extras.insert("prefix_ok".into(), flag(watch.prefix));
            extras.insert("suspect_ok".into(), flag(watch.justified));
            sync_report(out, extras)
        }
        ProtocolId::AsyncOneCrash => {
            let out = run_async(cfg, input, one_crash_peers(cfg)?, plan, &mut no_async_observer())?;
            let moved = honest(&out.peers, &out.status)
                .map(|p| p.reassigned().iter().sum::<usize>())
                .max()
                .unwrap_or(0);
            extras.insert("reassigned".into(), moved as f64);
            async_report(out, extras)
        }
        ProtocolId::AsyncFCrash => {
            let peers = f_crash_peers(cfg)?;
            let pf = peers[0].f();
            extras.insert("f".into(), pf as f64);
            let out = run_async(cfg, input, peers, plan, &mut no_async_observer())?;
            fcrash_extras(&out, cfg.n, cfg.k, pf, &mut extras);
            async_report(out, extras)
        }
    };
    Ok(report)
}

fn ratio_f64(r: Ratio) -> f64 {
    crate::model::ratio_to_f64(r)
}

/// Blacklists hold only corrupt peers; a query epoch learned in round
/// ℓ > f blacklisted at least 2^{ℓ−2} peers.
fn alg1_extras(out: &SyncOutcome<Alg1Peer>, plan: &FaultPlan, k: usize, extras: &mut Extras) {
    let corrupt: BTreeSet<PeerId> = match &plan.corrupt {
        CorruptSchedule::None => BTreeSet::new(),
        CorruptSchedule::Fixed(s) => s.clone(),
        other => {
            let last = out.decided_round.iter().flatten().max().copied().unwrap_or(1);
            (1..=last).flat_map(|r| other.at(r, k)).collect()
        }
    };
    let mut blacklist_ok = true;
    let mut floor_ok = true;
    let mut floor_misses = 0u64;
    let mut query_epochs = 0u64;
    for p in honest(&out.peers, &out.status) {
        blacklist_ok &= p.blacklist().is_subset(&corrupt);
        let first = p.params().first_round;
        for s in p.stats().iter().filter(|s| s.queried) {
            query_epochs += 1;
            if s.learn_round > first && s.blacklisted < 1u64 << (s.learn_round - 2) {
                floor_ok = false;
                floor_misses += 1;
            }
        }
    }
    extras.insert("blacklist_ok".into(), flag(blacklist_ok));
    extras.insert("epoch_floor_ok".into(), flag(floor_ok));
    extras.insert("epoch_floor_misses".into(), floor_misses as f64);
    extras.insert("query_epochs".into(), query_epochs as f64);
}

/// Mean determine cost per honest peer and level above 0, and the level count.
fn logn_extras(out: &SyncOutcome<LogNPeer>, extras: &mut Extras) {
    let (mut sum, mut count) = (0u64, 0u64);
    let mut levels = 0;
    for p in honest(&out.peers, &out.status) {
        levels = p.levels();
        extras.insert("phi".into(), p.layout().width(0) as f64);
        extras.insert("intervals".into(), p.layout().count(0) as f64);
        for &c in p.level_costs().iter().skip(1) {
            sum += c;
            count += 1;
        }
    }
    extras.insert("levels".into(), levels as f64);
    extras.insert("determine_mean".into(), if count == 0 { 0.0 } else { sum as f64 / count as f64 });
}

/// Halving of the overloaded set, labeling within ⌈lg K_i⌉+1 iterations
/// and the largest frozen-set determine cost.
fn boosted_extras(out: &SyncOutcome<BoostedPeer>, cfg: &SimConfig, extras: &mut Extras) {
    let mut halving_ok = true;
    let mut labeled_ok = true;
    let mut determine_max = 0u64;
    for p in honest(&out.peers, &out.status) {
        for u in p.u_history() {
            let cap = u.count.div_ceil(1usize << (u.j + 1).min(63));
            halving_ok &= u.remaining <= cap;
        }
        for (level, labels) in p.labels().iter().enumerate() {
            let level = level as u32;
            if level < p.layout().top_level() {
                labeled_ok &= labels.len() == p.layout().count(level);
            }
        }
        determine_max = determine_max.max(p.determine_costs().iter().map(|c| c.1).max().unwrap_or(0));
    }
    extras.insert("halving_ok".into(), flag(halving_ok));
    extras.insert("labeled_ok".into(), flag(labeled_ok));
    extras.insert("determine_max".into(), determine_max as f64);
    extras.insert("overload".into(), ratio_f64(Ratio::from_integer(4) / cfg.gamma()));
}

/// Unknown bits at each phase start against n·(f/k)^p, exactly, and the
/// query bound 2·Σ_p (n/k)(f/k)^p + 1 = 2n/(k−f) + 1.
fn fcrash_extras(out: &AsyncOutcome<FCrashPeer>, n: usize, k: usize, f: usize, extras: &mut Extras) {
    let mut unknown_ok = true;
    let mut phases = 0u32;
    // Earliest phase at which some peer was over the bound, 0 if none.
    let mut first_excess = 0u32;
    for p in honest(&out.peers, &out.status) {
        for a in p.audits() {
            phases = phases.max(a.phase);
            let lhs = BigUint::from(a.unknown) * BigUint::from(k).pow(a.phase);
            let rhs = BigUint::from(n) * BigUint::from(f).pow(a.phase);
            if lhs > rhs {
                unknown_ok = false;
                if first_excess == 0 || a.phase < first_excess {
                    first_excess = a.phase;
                }
            }
        }
    }
    extras.insert("unknown_excess_phase".into(), first_excess as f64);
    let q_bound = Ratio::new(2 * n as i64, (k - f) as i64) + Ratio::from_integer(1);
    extras.insert("unknown_ok".into(), flag(unknown_ok));
    extras.insert("phases".into(), phases as f64);
    extras.insert("phase_cap".into(), phase_cap(n, k, f) as f64);
    extras.insert("q_bound".into(), ratio_f64(q_bound));
    extras.insert(
        "q_bound_ok".into(),
        flag(Ratio::from_integer(out.metrics.q_max as i64) <= q_bound),
    );
}

/// Honest Static peers agree on (view, I, suspects) after every round, and
/// every suspect has crashed.
pub struct StaticWatch {
    pub agree: bool,
    pub justified: bool,
}

impl Default for StaticWatch {
    fn default() -> Self {
        StaticWatch {
            agree: true,
            justified: true,
        }
    }
}

impl SyncObserver<StaticPeer> for StaticWatch {
    fn after_round(&mut self, _: u64, peers: &[StaticPeer], status: &[PeerStatus]) -> Result<(), SimError> {
        let mut live = honest(peers, status);
        if let Some(first) = live.next() {
            let key = (first.view(), first.index(), first.suspected_crashed());
            for p in live {
                self.agree &= (p.view(), p.index(), p.suspected_crashed()) == key;
            }
        }
        for p in honest(peers, status) {
            self.justified &= p.suspected_crashed().iter().all(|q| status[q.index()] == PeerStatus::Crashed);
        }
        Ok(())
    }
}

/// Largest spread of I over honest Rapid peers, whether every honest peer
/// holds every bit below any honest peer's I, and whether suspects crashed.
pub struct RapidWatch {
    pub spread: usize,
    pub prefix: bool,
    pub justified: bool,
}

impl RapidWatch {
    pub fn new() -> Self {
        RapidWatch {
            spread: 0,
            prefix: true,
            justified: true,
        }
    }
}

impl Default for RapidWatch {
    fn default() -> Self {
        Self::new()
    }
}

impl SyncObserver<RapidPeer> for RapidWatch {
    fn after_round(&mut self, _: u64, peers: &[RapidPeer], status: &[PeerStatus]) -> Result<(), SimError> {
        let (mut lo, mut hi) = (usize::MAX, 0);
        let mut known_prefix = usize::MAX;
        for p in honest(peers, status) {
            lo = lo.min(p.index());
            hi = hi.max(p.index());
            let first_gap = p.res().unknown_positions().next().unwrap_or(p.res().len());
            known_prefix = known_prefix.min(first_gap);
            self.justified &= p.suspected_crashed().iter().all(|q| status[q.index()] == PeerStatus::Crashed);
        }
        if hi > 0 {
            self.spread = self.spread.max(hi - lo);
            // Bits 1..I−1 are positions 0..I−2.
            self.prefix &= hi - 1 <= known_prefix;
        }
        Ok(())
    }
}
