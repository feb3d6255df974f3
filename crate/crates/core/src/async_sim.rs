//! Asynchronous event scheduler with exact rational time.
//!
//! Every peer runs a start-up step at time 0, then reacts to deliveries one
//! at a time. Each copy of a message gets its own delay d ∈ (0, 1] from the
//! plan's delay policy. Deliveries are ordered by (time, sender, sequence).

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use num_traits::Zero;
use rand::RngCore;
use serde_json::{json, Value};

use crate::adversaries::{CrashPoint, DelayPolicy, FaultPlan};
use crate::bits::BitString;
use crate::error::SimError;
use crate::event::{EventKind, EventLog};
use crate::metrics::{finish_metrics, MessageCounter, Recipients, RunMetrics, Stamp};
use crate::model::{InputVector, PeerId, Ratio, SimConfig, Timing};
use crate::rng::{delay_stream, peer_stream, StreamRng};
use crate::source::Source;
use crate::sync_sim::{recipients_json, Outbox, Payload, PeerStatus, Wire};

pub struct AsyncCtx<'a, M> {
    pub now: Ratio,
    pub me: PeerId,
    pub rng: &'a mut dyn RngCore,
    pub out: &'a mut Outbox<M>,
    source: &'a mut Source,
    notes: &'a mut Vec<Value>,
}

impl<M> AsyncCtx<'_, M> {
    /// Reads 1-based bit `index` from the source, charging one query.
    pub fn query(&mut self, index: usize) -> Result<bool, SimError> {
        self.source.query_bit(self.me, index)
    }

    /// Queries spent so far by this peer.
    pub fn queries(&self) -> u64 {
        self.source.count(self.me)
    }

    /// `All` reaches every other peer; peers never message themselves.
    pub fn send_all(&mut self, msg: M) {
        self.out.send_all(msg);
    }

    pub fn send_to(&mut self, to: PeerId, msg: M) {
        self.out.send_to(to, msg);
    }

    pub fn note(&mut self, v: Value) {
        self.notes.push(v);
    }
}

pub trait AsyncPeer {
    type Msg: Clone + Payload;

    fn on_start(&mut self, ctx: &mut AsyncCtx<'_, Self::Msg>) -> Result<(), SimError>;

    fn on_deliver(&mut self, from: PeerId, msg: Self::Msg, ctx: &mut AsyncCtx<'_, Self::Msg>) -> Result<(), SimError>;

    fn output(&self) -> Option<&BitString>;

    /// A halted peer ignores further deliveries.
    fn halted(&self) -> bool {
        false
    }
}

/// Called after every handled event.
pub trait AsyncObserver<P> {
    fn after_event(&mut self, now: Ratio, peers: &[P], status: &[PeerStatus]) -> Result<(), SimError>;
}

impl<P, F> AsyncObserver<P> for F
where
    F: FnMut(Ratio, &[P], &[PeerStatus]) -> Result<(), SimError>,
{
    fn after_event(&mut self, now: Ratio, peers: &[P], status: &[PeerStatus]) -> Result<(), SimError> {
        self(now, peers, status)
    }
}

pub fn no_async_observer<P>() -> impl AsyncObserver<P> {
    |_: Ratio, _: &[P], _: &[PeerStatus]| Ok(())
}

pub struct AsyncOutcome<P> {
    pub metrics: RunMetrics,
    pub outputs: Vec<Option<BitString>>,
    pub status: Vec<PeerStatus>,
    pub decided_at: Vec<Option<Ratio>>,
    pub peers: Vec<P>,
    pub log: EventLog,
    pub events: u64,
}

struct Pending<M> {
    to: PeerId,
    from: PeerId,
    sent_at: Ratio,
    msg: M,
}

/// Heap key: earliest time first, then sender, then sequence number.
type Key = Reverse<(Ratio, u32, u64)>;

struct Engine<'p, M> {
    k: usize,
    wire: Wire,
    plan: &'p FaultPlan,
    rngs: Vec<StreamRng>,
    delay_rng: StreamRng,
    source: Source,
    log: EventLog,
    counter: MessageCounter,
    status: Vec<PeerStatus>,
    batches: Vec<u64>,
    heap: BinaryHeap<Key>,
    slots: Vec<Option<Pending<M>>>,
}

impl<M: Clone + Payload> Engine<'_, M> {
    /// Runs one handler of peer `idx` and schedules what it sends.
    fn step<P: AsyncPeer<Msg = M>>(
        &mut self,
        peers: &mut [P],
        idx: usize,
        now: Ratio,
        delivery: Option<(PeerId, M)>,
    ) -> Result<(), SimError> {
        let k = self.k;
        let p = PeerId::from_index(idx);
        let batch = self.batches[idx];
        self.batches[idx] += 1;
        let mut out = Outbox::default();
        let mut notes = Vec::new();
        {
            let mut ctx = AsyncCtx {
                now,
                me: p,
                rng: &mut self.rngs[idx],
                out: &mut out,
                source: &mut self.source,
                notes: &mut notes,
            };
            let before = ctx.queries();
            match delivery {
                None => peers[idx].on_start(&mut ctx)?,
                Some((from, msg)) => peers[idx].on_deliver(from, msg, &mut ctx)?,
            }
            let spent = ctx.queries() - before;
            if spent > 0 {
                self.log.push(Stamp::Time(now), EventKind::Query, p, json!({"count": spent}));
            }
        }
        for v in notes {
            self.log.push(Stamp::Time(now), EventKind::Stat, p, v);
        }
        let cut = match self.plan.crashes.get(&p) {
            Some(CrashPoint::Async { batch: b, delivered }) if *b == batch => Some(delivered),
            _ => None,
        };
        for (to, msg) in out.into_items() {
            let targets: Vec<PeerId> = match &to {
                Recipients::All => PeerId::all(k).filter(|q| *q != p).collect(),
                other => other.expand(k),
            };
            let targets: Vec<PeerId> = targets
                .into_iter()
                .filter(|q| cut.map_or(true, |d| d.contains(q)))
                .collect();
            let bits = msg.payload_bits(self.wire);
            let charged = targets.iter().filter(|q| **q != p).count() as u64;
            self.counter.charge(cut.is_none(), charged, bits);
            self.log.push_with(Stamp::Time(now), EventKind::Send, p, || {
                json!({"to": recipients_json(&Recipients::Set(targets.clone())), "bits": bits})
            });
            for q in targets {
                let seq = self.slots.len() as u64;
                let d = self.plan.delay.delay(p, q, seq, &mut self.delay_rng);
                if !DelayPolicy::is_valid_delay(d) {
                    return Err(SimError::DelayValidity { delay: d.to_string() });
                }
                self.heap.push(Reverse((now + d, p.get(), seq)));
                self.slots.push(Some(Pending {
                    to: q,
                    from: p,
                    sent_at: now,
                    msg: msg.clone(),
                }));
            }
        }
        if cut.is_some() {
            self.status[idx] = PeerStatus::Crashed;
            self.log.push(Stamp::Time(now), EventKind::Crash, p, json!({"batch": batch}));
        }
        Ok(())
    }

    fn honest(&self) -> Vec<bool> {
        self.status.iter().map(|s| *s == PeerStatus::Honest).collect()
    }

    fn mark_decisions<P: AsyncPeer>(&mut self, now: Ratio, peers: &[P], decided_at: &mut [Option<Ratio>]) {
        for i in 0..self.k {
            if self.status[i] == PeerStatus::Honest && decided_at[i].is_none() && peers[i].output().is_some() {
                decided_at[i] = Some(now);
                self.log.push(Stamp::Time(now), EventKind::Decide, PeerId::from_index(i), Value::Null);
            }
        }
    }

    fn all_decided<P: AsyncPeer>(&self, peers: &[P]) -> bool {
        (0..self.k).all(|i| self.status[i] != PeerStatus::Honest || peers[i].output().is_some())
    }
}

pub fn run_async<P: AsyncPeer>(
    cfg: &SimConfig,
    input: &InputVector,
    mut peers: Vec<P>,
    plan: &FaultPlan,
    observer: &mut dyn AsyncObserver<P>,
) -> Result<AsyncOutcome<P>, SimError> {
    cfg.validate()?;
    plan.validate(cfg)?;
    if cfg.timing != Timing::Asynchronous {
        return Err(SimError::config("run_async needs asynchronous timing"));
    }
    let k = cfg.k;
    if peers.len() != k || input.len() != cfg.n {
        return Err(SimError::config("peer count or input length does not match the config"));
    }
    let mut e: Engine<'_, P::Msg> = Engine {
        k,
        wire: Wire { n: cfg.n, k },
        plan,
        rngs: PeerId::all(k).map(|p| peer_stream(cfg.seed, p)).collect(),
        delay_rng: delay_stream(cfg.seed),
        source: Source::new(input.clone(), k, Timing::Asynchronous),
        log: EventLog::new(cfg.record_events),
        counter: MessageCounter::default(),
        status: vec![PeerStatus::Honest; k],
        batches: vec![0; k],
        heap: BinaryHeap::new(),
        slots: Vec::new(),
    };
    let cap = cfg.event_cap();
    let mut events = 0u64;
    let mut decided_at: Vec<Option<Ratio>> = vec![None; k];

    let mut now = Ratio::zero();
    for idx in 0..k {
        e.step(&mut peers, idx, now, None)?;
        events += 1;
    }
    e.mark_decisions(now, &peers, &mut decided_at);
    observer.after_event(now, &peers, &e.status)?;

    while !e.all_decided(&peers) {
        let Some(Reverse((at, _, s))) = e.heap.pop() else {
            let stuck: Vec<String> = (0..k)
                .filter(|&i| e.status[i] == PeerStatus::Honest && peers[i].output().is_none())
                .map(|i| PeerId::from_index(i).to_string())
                .collect();
            return Err(SimError::Liveness(format!(
                "no pending deliveries at time {now}; undecided: {}",
                stuck.join(", ")
            )));
        };
        if events >= cap {
            let partial = finish_metrics(e.source.counts(), &e.honest(), Stamp::Time(now), &e.counter, false, cfg.seed);
            return Err(SimError::NonTermination {
                limit: cap,
                unit: "events",
                partial: Box::new(partial),
            });
        }
        events += 1;
        now = at;
        let pending = e.slots[s as usize].take().expect("each delivery is popped once");
        debug_assert!(at > pending.sent_at);
        let idx = pending.to.index();
        if e.status[idx] == PeerStatus::Crashed || peers[idx].halted() {
            continue;
        }
        e.log.push(Stamp::Time(now), EventKind::Deliver, pending.to, json!({"from": pending.from.get()}));
        e.step(&mut peers, idx, now, Some((pending.from, pending.msg)))?;
        e.mark_decisions(now, &peers, &mut decided_at);
        observer.after_event(now, &peers, &e.status)?;
    }

    let honest = e.honest();
    let outputs: Vec<Option<BitString>> = peers.iter().map(|p| p.output().cloned()).collect();
    let correct = outputs
        .iter()
        .zip(&honest)
        .filter(|(_, &h)| h)
        .all(|(o, _)| o.as_ref() == Some(input.as_bits()));
    let t = decided_at
        .iter()
        .zip(&honest)
        .filter(|(_, &h)| h)
        .filter_map(|(d, _)| *d)
        .max()
        .unwrap_or(now);
    let metrics = finish_metrics(e.source.counts(), &honest, Stamp::Time(t), &e.counter, correct, cfg.seed);
    Ok(AsyncOutcome {
        metrics,
        outputs,
        status: e.status,
        decided_at,
        peers,
        log: e.log,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProtocolId;

    #[derive(Clone)]
    struct Hello;
    impl Payload for Hello {
        fn payload_bits(&self, _: Wire) -> u64 {
            1
        }
    }

    /// Peer 1 sends one message to peer 2; both decide on delivery.
    struct Pair {
        me: usize,
        bits: BitString,
        done: bool,
    }

    impl AsyncPeer for Pair {
        type Msg = Hello;
        fn on_start(&mut self, ctx: &mut AsyncCtx<'_, Hello>) -> Result<(), SimError> {
            if self.me == 0 {
                for i in 1..=self.bits.len() {
                    let b = ctx.query(i)?;
                    self.bits.set(i - 1, b);
                }
                ctx.send_to(PeerId::new(2), Hello);
                self.done = true;
            }
            Ok(())
        }
        fn on_deliver(&mut self, _: PeerId, _: Hello, ctx: &mut AsyncCtx<'_, Hello>) -> Result<(), SimError> {
            for i in 1..=self.bits.len() {
                let b = ctx.query(i)?;
                self.bits.set(i - 1, b);
            }
            self.done = true;
            Ok(())
        }
        fn output(&self) -> Option<&BitString> {
            self.done.then_some(&self.bits)
        }
    }

    fn pair(n: usize) -> Vec<Pair> {
        (0..2).map(|me| Pair { me, bits: BitString::zeros(n), done: false }).collect()
    }

    #[test]
    fn half_delay_gives_half_time() {
        let cfg = SimConfig::new(ProtocolId::AsyncOneCrash, 2, 2, Ratio::zero(), 1);
        let x = InputVector::from_bools(&[true, false]).unwrap();
        let plan = FaultPlan::none().with_delay(DelayPolicy::Constant(Ratio::new(1, 2)));
        let out = run_async(&cfg, &x, pair(2), &plan, &mut no_async_observer()).unwrap();
        assert!(out.metrics.correct);
        assert!(out.metrics.t >= Stamp::Time(Ratio::new(1, 2)));
        assert_eq!(out.metrics.m_total, 1);
    }

    #[test]
    fn zero_delay_from_policy_is_rejected() {
        let cfg = SimConfig::new(ProtocolId::AsyncOneCrash, 2, 2, Ratio::zero(), 1);
        let x = InputVector::from_bools(&[true, false]).unwrap();
        let plan = FaultPlan::none().with_delay(DelayPolicy::Scripted(vec![Ratio::zero()]));
        let err = run_async(&cfg, &x, pair(2), &plan, &mut no_async_observer());
        assert!(matches!(err, Err(SimError::DelayValidity { .. })));
    }

    #[test]
    fn starved_peer_is_a_liveness_error() {
        let cfg = SimConfig::new(ProtocolId::AsyncOneCrash, 2, 2, Ratio::new(1, 2), 1);
        let x = InputVector::from_bools(&[true, false]).unwrap();
        let mut crashes = std::collections::BTreeMap::new();
        crashes.insert(
            PeerId::new(1),
            CrashPoint::Async { batch: 0, delivered: Default::default() },
        );
        let err = run_async(&cfg, &x, pair(2), &FaultPlan::crashes(crashes), &mut no_async_observer());
        assert!(matches!(err, Err(SimError::Liveness(_))));
    }
}
