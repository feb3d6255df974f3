//! Synchronous round scheduler.
//!
//! Each round runs three sub-rounds in order: query sending, query response
//! and message passing. A peer's `on_query` sees the messages sent in the
//! previous round and issues queries; `on_message` sees the answers and
//! emits this round's messages, which become readable next round.

use std::collections::BTreeSet;
use std::rc::Rc;

use rand::RngCore;
use serde_json::{json, Value};

use crate::adversaries::{crash_cut, CrashPoint, FaultPlan};
use crate::bits::BitString;
use crate::error::SimError;
use crate::event::{EventKind, EventLog};
use crate::metrics::{finish_metrics, MessageCounter, Recipients, RunMetrics, Stamp};
use crate::model::{CommMode, InputVector, PeerId, SimConfig, Timing};
use crate::rng::{adversary_stream, peer_stream, StreamRng};
use crate::source::{Source, SubRound};

/// Global sizes a payload may need to price its fields.
#[derive(Clone, Copy, Debug)]
pub struct Wire {
    pub n: usize,
    pub k: usize,
}

pub trait Payload {
    fn payload_bits(&self, wire: Wire) -> u64;
}

#[derive(Clone, Debug)]
pub struct Delivery<M> {
    pub from: PeerId,
    pub sent_round: u64,
    pub msg: M,
}

/// Messages readable in one round. Broadcasts sit in a buffer shared by
/// every peer; point-to-point messages are per recipient.
#[derive(Debug)]
pub struct Inbox<M> {
    shared: Rc<Vec<Delivery<M>>>,
    direct: Vec<Delivery<M>>,
}

impl<M> Inbox<M> {
    pub fn new(shared: Rc<Vec<Delivery<M>>>, direct: Vec<Delivery<M>>) -> Self {
        Inbox { shared, direct }
    }

    pub fn empty() -> Self {
        Inbox::new(Rc::new(Vec::new()), Vec::new())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Delivery<M>> {
        self.shared.iter().chain(self.direct.iter())
    }

    pub fn shared(&self) -> &[Delivery<M>] {
        &self.shared
    }

    pub fn shared_rc(&self) -> &Rc<Vec<Delivery<M>>> {
        &self.shared
    }

    pub fn direct(&self) -> &[Delivery<M>] {
        &self.direct
    }

    /// True when this peer sees exactly what every other peer sees.
    pub fn is_uniform(&self) -> bool {
        self.direct.is_empty()
    }

    pub fn len(&self) -> usize {
        self.shared.len() + self.direct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Queries requested during the query sub-round, as `(start, len)` ranges
/// over 1-based indices.
#[derive(Clone, Debug, Default)]
pub struct QueryPort {
    requests: Vec<(usize, usize)>,
}

impl QueryPort {
    pub fn bit(&mut self, index: usize) {
        self.requests.push((index, 1));
    }

    pub fn range(&mut self, start: usize, len: usize) {
        if len > 0 {
            self.requests.push((start, len));
        }
    }

    pub fn requests(&self) -> &[(usize, usize)] {
        &self.requests
    }

    pub fn total(&self) -> u64 {
        self.requests.iter().map(|&(_, l)| l as u64).sum()
    }
}

/// Source answers for this round's queries.
#[derive(Clone, Debug, Default)]
pub struct Answers {
    ranges: Vec<(usize, BitString)>,
}

impl Answers {
    pub fn from_ranges(ranges: Vec<(usize, BitString)>) -> Self {
        Answers { ranges }
    }

    /// Bit at 1-based `index`, if it was queried this round.
    pub fn bit(&self, index: usize) -> Option<bool> {
        self.ranges.iter().find_map(|(start, bits)| {
            (index >= *start && index < start + bits.len()).then(|| bits.get(index - start))
        })
    }

    /// The answer to the range request that began at `start`.
    pub fn range(&self, start: usize) -> Option<&BitString> {
        self.ranges.iter().find(|(s, _)| *s == start).map(|(_, b)| b)
    }

    pub fn ranges(&self) -> &[(usize, BitString)] {
        &self.ranges
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

#[derive(Debug)]
pub struct Outbox<M> {
    items: Vec<(Recipients, M)>,
}

impl<M> Default for Outbox<M> {
    fn default() -> Self {
        Outbox { items: Vec::new() }
    }
}

impl<M> Outbox<M> {
    pub fn send_all(&mut self, msg: M) {
        self.items.push((Recipients::All, msg));
    }

    pub fn send_to(&mut self, to: PeerId, msg: M) {
        self.items.push((Recipients::One(to), msg));
    }

    pub fn send(&mut self, to: Recipients, msg: M) {
        self.items.push((to, msg));
    }

    pub fn items(&self) -> &[(Recipients, M)] {
        &self.items
    }

    pub fn into_items(self) -> Vec<(Recipients, M)> {
        self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

pub struct QueryCtx<'a, M> {
    pub round: u64,
    pub me: PeerId,
    pub inbox: &'a Inbox<M>,
    pub rng: &'a mut dyn RngCore,
    pub port: &'a mut QueryPort,
    notes: Option<&'a mut Vec<Value>>,
}

impl<'a, M> QueryCtx<'a, M> {
    pub(crate) fn new(
        round: u64,
        me: PeerId,
        inbox: &'a Inbox<M>,
        rng: &'a mut dyn RngCore,
        port: &'a mut QueryPort,
        notes: Option<&'a mut Vec<Value>>,
    ) -> Self {
        QueryCtx { round, me, inbox, rng, port, notes }
    }

    pub fn query(&mut self, index: usize) {
        self.port.bit(index);
    }

    pub fn query_range(&mut self, start: usize, len: usize) {
        self.port.range(start, len);
    }

    /// Attaches a statistics record to the event log.
    pub fn note(&mut self, v: Value) {
        self.note_with(|| v);
    }

    /// Like `note`, but builds the record only when events are kept.
    pub fn note_with(&mut self, v: impl FnOnce() -> Value) {
        if let Some(notes) = self.notes.as_deref_mut() {
            notes.push(v());
        }
    }
}

pub struct MessageCtx<'a, M> {
    pub round: u64,
    pub me: PeerId,
    pub answers: &'a Answers,
    pub rng: &'a mut dyn RngCore,
    pub out: &'a mut Outbox<M>,
    notes: Option<&'a mut Vec<Value>>,
}

impl<'a, M> MessageCtx<'a, M> {
    pub(crate) fn new(
        round: u64,
        me: PeerId,
        answers: &'a Answers,
        rng: &'a mut dyn RngCore,
        out: &'a mut Outbox<M>,
        notes: Option<&'a mut Vec<Value>>,
    ) -> Self {
        MessageCtx { round, me, answers, rng, out, notes }
    }

    pub fn send_all(&mut self, msg: M) {
        self.out.send_all(msg);
    }

    pub fn send_to(&mut self, to: PeerId, msg: M) {
        self.out.send_to(to, msg);
    }

    pub fn note(&mut self, v: Value) {
        self.note_with(|| v);
    }

    /// Like `note`, but builds the record only when events are kept.
    pub fn note_with(&mut self, v: impl FnOnce() -> Value) {
        if let Some(notes) = self.notes.as_deref_mut() {
            notes.push(v());
        }
    }
}

/// A protocol instance driven by `run_sync`.
pub trait SyncPeer {
    type Msg: Clone + Payload;

    fn on_query(&mut self, ctx: &mut QueryCtx<'_, Self::Msg>) -> Result<(), SimError>;

    fn on_message(&mut self, ctx: &mut MessageCtx<'_, Self::Msg>) -> Result<(), SimError>;

    /// The downloaded vector once the peer has decided.
    fn output(&self) -> Option<&BitString>;
}

/// What the peer sent last round, as seen by the adversary.
#[derive(Clone, Debug)]
pub struct SentRecord<M> {
    pub from: PeerId,
    pub to: Recipients,
    pub msg: M,
}

/// Information available to a Byzantine strategy at the start of its turn:
/// everything up to the previous round, plus the input itself.
pub struct AdversaryView<'a, M> {
    pub round: u64,
    pub corrupt: &'a BTreeSet<PeerId>,
    pub previous: &'a [SentRecord<M>],
    pub input: &'a InputVector,
    pub config: &'a SimConfig,
}

/// Messages emitted by corrupt peers. Sends from honest ids are rejected,
/// and in broadcast mode each corrupt peer gets one message to everyone.
pub struct ByzOutbox<'a, M> {
    corrupt: &'a BTreeSet<PeerId>,
    mode: CommMode,
    items: Vec<(PeerId, Recipients, M)>,
}

impl<'a, M> ByzOutbox<'a, M> {
    pub fn new(corrupt: &'a BTreeSet<PeerId>, mode: CommMode) -> Self {
        ByzOutbox {
            corrupt,
            mode,
            items: Vec::new(),
        }
    }

    pub fn send(&mut self, from: PeerId, to: Recipients, msg: M) -> Result<(), SimError> {
        if !self.corrupt.contains(&from) {
            return Err(SimError::Scheduler(format!("adversary forged a message from honest {from}")));
        }
        if self.mode == CommMode::Broadcast {
            if to != Recipients::All {
                return Err(SimError::Scheduler(format!("{from} sent point-to-point in broadcast mode")));
            }
            if self.items.iter().any(|(f, _, _)| *f == from) {
                return Err(SimError::Scheduler(format!("{from} broadcast twice in one round")));
            }
        }
        self.items.push((from, to, msg));
        Ok(())
    }

    pub fn items(&self) -> &[(PeerId, Recipients, M)] {
        &self.items
    }
}

pub trait ByzantineStrategy<M> {
    /// Whether the strategy reads `AdversaryView::previous`; when false the
    /// scheduler skips recording it.
    fn wants_history(&self) -> bool {
        false
    }

    fn act(
        &mut self,
        view: &AdversaryView<'_, M>,
        rng: &mut dyn RngCore,
        out: &mut ByzOutbox<'_, M>,
    ) -> Result<(), SimError>;
}

/// Corrupt peers that stay quiet.
pub struct Silent;

impl<M> ByzantineStrategy<M> for Silent {
    fn act(&mut self, _: &AdversaryView<'_, M>, _: &mut dyn RngCore, _: &mut ByzOutbox<'_, M>) -> Result<(), SimError> {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeerStatus {
    Honest,
    Corrupt,
    Crashed,
}

/// Called after each round with the peers' states. Used by tests and the
/// harness to audit invariants that span peers.
pub trait SyncObserver<P> {
    fn after_round(&mut self, round: u64, peers: &[P], status: &[PeerStatus]) -> Result<(), SimError>;
}

impl<P, F> SyncObserver<P> for F
where
    F: FnMut(u64, &[P], &[PeerStatus]) -> Result<(), SimError>,
{
    fn after_round(&mut self, round: u64, peers: &[P], status: &[PeerStatus]) -> Result<(), SimError> {
        self(round, peers, status)
    }
}

/// Observer that checks nothing.
pub fn no_observer<P>() -> impl SyncObserver<P> {
    |_: u64, _: &[P], _: &[PeerStatus]| Ok(())
}

pub struct SyncOutcome<P> {
    pub metrics: RunMetrics,
    pub outputs: Vec<Option<BitString>>,
    pub status: Vec<PeerStatus>,
    pub decided_round: Vec<Option<u64>>,
    pub peers: Vec<P>,
    pub log: EventLog,
}

fn crash_point_at(plan: &FaultPlan, p: PeerId, round: u64, sub: SubRound) -> Option<&CrashPoint> {
    match plan.crashes.get(&p) {
        Some(cp @ CrashPoint::Sync { round: r, subround, .. }) if *r == round && *subround == sub => Some(cp),
        _ => None,
    }
}

fn deliver<M: Clone>(
    from: PeerId,
    round: u64,
    to: &Recipients,
    msg: M,
    shared: &mut Vec<Delivery<M>>,
    direct: &mut [Vec<Delivery<M>>],
) {
    match to {
        Recipients::All => shared.push(Delivery { from, sent_round: round, msg }),
        Recipients::One(q) => direct[q.index()].push(Delivery { from, sent_round: round, msg }),
        Recipients::Set(v) => {
            for q in v {
                direct[q.index()].push(Delivery {
                    from,
                    sent_round: round,
                    msg: msg.clone(),
                });
            }
        }
    }
}

/// Runs a synchronous execution until every honest peer has an output.
pub fn run_sync<P: SyncPeer>(
    cfg: &SimConfig,
    input: &InputVector,
    mut peers: Vec<P>,
    plan: &FaultPlan,
    byz: &mut dyn ByzantineStrategy<P::Msg>,
    observer: &mut dyn SyncObserver<P>,
) -> Result<SyncOutcome<P>, SimError> {
    cfg.validate()?;
    plan.validate(cfg)?;
    if cfg.timing != Timing::Synchronous {
        return Err(SimError::config("run_sync needs synchronous timing"));
    }
    let k = cfg.k;
    if peers.len() != k || input.len() != cfg.n {
        return Err(SimError::config(format!(
            "expected {k} peers and {} input bits, got {} and {}",
            cfg.n,
            peers.len(),
            input.len()
        )));
    }
    let wire = Wire { n: cfg.n, k };
    let mut rngs: Vec<StreamRng> = PeerId::all(k).map(|p| peer_stream(cfg.seed, p)).collect();
    let mut adv_rng = adversary_stream(cfg.seed);
    let mut source = Source::new(input.clone(), k, Timing::Synchronous);
    let mut log = EventLog::new(cfg.record_events);
    let mut counter = MessageCounter::default();
    let mut status = vec![PeerStatus::Honest; k];
    let mut crashed = vec![false; k];
    let mut decided_round: Vec<Option<u64>> = vec![None; k];
    let mut pending_shared: Rc<Vec<Delivery<P::Msg>>> = Rc::new(Vec::new());
    let mut pending_direct: Vec<Vec<Delivery<P::Msg>>> = (0..k).map(|_| Vec::new()).collect();
    let mut previous: Vec<SentRecord<P::Msg>> = Vec::new();
    let keep_history = byz.wants_history();
    let cap = cfg.round_cap();

    for round in 1..=cap {
        let stamp = Stamp::Round(round);
        let corrupt = plan.corrupt.at(round, k);
        for p in &corrupt {
            log.push(stamp, EventKind::Corrupt, *p, Value::Null);
        }

        // Query sub-round.
        source.set_phase(SubRound::Query);
        let mut answers: Vec<Option<Answers>> = (0..k).map(|_| None).collect();
        let mut notes: Vec<Vec<Value>> = (0..k).map(|_| Vec::new()).collect();
        // A peer that decides while reading last round's messages, without
        // querying, decided at the end of that round.
        let mut decided_on_read = vec![false; k];
        for idx in 0..k {
            let p = PeerId::from_index(idx);
            let direct = std::mem::take(&mut pending_direct[idx]);
            if crashed[idx] || corrupt.contains(&p) {
                continue;
            }
            if crash_point_at(plan, p, round, SubRound::Query).is_some() {
                crashed[idx] = true;
                log.push(stamp, EventKind::Crash, p, json!({"subround": "query"}));
                continue;
            }
            let inbox = Inbox::new(pending_shared.clone(), direct);
            let mut port = QueryPort::default();
            let had_output = peers[idx].output().is_some();
            peers[idx].on_query(&mut QueryCtx {
                round,
                me: p,
                inbox: &inbox,
                rng: &mut rngs[idx],
                port: &mut port,
                notes: log.enabled().then_some(&mut notes[idx]),
            })?;
            let mut ranges = Vec::with_capacity(port.requests().len());
            for &(start, len) in port.requests() {
                ranges.push((start, source.query_range(p, start, len)?));
            }
            let total = port.total();
            decided_on_read[idx] = !had_output && total == 0 && peers[idx].output().is_some();
            if total > 0 {
                log.push(stamp, EventKind::Query, p, json!({"count": total}));
            }
            answers[idx] = Some(Answers::from_ranges(ranges));
        }

        // Response sub-round: a crash here wastes the queries.
        source.set_phase(SubRound::Response);
        for idx in 0..k {
            let p = PeerId::from_index(idx);
            if answers[idx].is_some() && crash_point_at(plan, p, round, SubRound::Response).is_some() {
                crashed[idx] = true;
                answers[idx] = None;
                log.push(stamp, EventKind::Crash, p, json!({"subround": "response"}));
            }
        }

        // Message sub-round.
        source.set_phase(SubRound::Message);
        let mut shared_next: Vec<Delivery<P::Msg>> = Vec::new();
        let mut direct_next: Vec<Vec<Delivery<P::Msg>>> = (0..k).map(|_| Vec::new()).collect();
        let mut sent: Vec<SentRecord<P::Msg>> = Vec::new();
        for idx in 0..k {
            let Some(ans) = answers[idx].take() else { continue };
            let p = PeerId::from_index(idx);
            let mut out = Outbox::default();
            peers[idx].on_message(&mut MessageCtx {
                round,
                me: p,
                answers: &ans,
                rng: &mut rngs[idx],
                out: &mut out,
                notes: log.enabled().then_some(&mut notes[idx]),
            })?;
            if cfg.mode == CommMode::Broadcast
                && (out.items().len() > 1 || out.items().iter().any(|(to, _)| *to != Recipients::All))
            {
                return Err(SimError::Scheduler(format!(
                    "{p} sent more than one broadcast in round {round}"
                )));
            }
            let cut = crash_point_at(plan, p, round, SubRound::Message).map(|cp| cp.delivered().clone());
            for (to, msg) in out.into_items() {
                let to = match &cut {
                    Some(d) => crash_cut(&to, d, k),
                    None => to,
                };
                let bits = msg.payload_bits(wire);
                counter.charge(cut.is_none(), to.charged(p, k), bits);
                log.push_with(stamp, EventKind::Send, p, || {
                    json!({"to": recipients_json(&to), "bits": bits})
                });
                if keep_history {
                    sent.push(SentRecord { from: p, to: to.clone(), msg: msg.clone() });
                }
                deliver(p, round, &to, msg, &mut shared_next, &mut direct_next);
            }
            if cut.is_some() {
                crashed[idx] = true;
                log.push(stamp, EventKind::Crash, p, json!({"subround": "message"}));
            }
        }

        if !corrupt.is_empty() {
            let view = AdversaryView {
                round,
                corrupt: &corrupt,
                previous: &previous,
                input,
                config: cfg,
            };
            let mut bo = ByzOutbox::new(&corrupt, cfg.mode);
            byz.act(&view, &mut adv_rng, &mut bo)?;
            for (from, to, msg) in bo.items {
                log.push_with(stamp, EventKind::Send, from, || {
                    json!({"to": recipients_json(&to), "byzantine": true})
                });
                if keep_history {
                    sent.push(SentRecord { from, to: to.clone(), msg: msg.clone() });
                }
                deliver(from, round, &to, msg, &mut shared_next, &mut direct_next);
            }
        }
        previous = sent;
        pending_shared = Rc::new(shared_next);
        pending_direct = direct_next;

        for idx in 0..k {
            let p = PeerId::from_index(idx);
            status[idx] = if crashed[idx] {
                PeerStatus::Crashed
            } else if corrupt.contains(&p) {
                PeerStatus::Corrupt
            } else {
                PeerStatus::Honest
            };
            if log.enabled() {
                for v in notes[idx].drain(..) {
                    log.push(stamp, EventKind::Stat, p, v);
                }
            }
            if status[idx] == PeerStatus::Honest && decided_round[idx].is_none() && peers[idx].output().is_some() {
                decided_round[idx] = Some(if decided_on_read[idx] { round - 1 } else { round });
                log.push(stamp, EventKind::Decide, p, Value::Null);
            }
        }
        observer.after_round(round, &peers, &status)?;

        let done = (0..k).all(|i| status[i] != PeerStatus::Honest || peers[i].output().is_some());
        if done {
            return Ok(finish(cfg, input, source, counter, status, decided_round, peers, log, round, true));
        }
    }
    let out = finish(cfg, input, source, counter, status, decided_round, peers, log, cap, false);
    Err(SimError::NonTermination {
        limit: cap,
        unit: "rounds",
        partial: Box::new(out.metrics),
    })
}

#[allow(clippy::too_many_arguments)]
fn finish<P: SyncPeer>(
    cfg: &SimConfig,
    input: &InputVector,
    source: Source,
    counter: MessageCounter,
    status: Vec<PeerStatus>,
    decided_round: Vec<Option<u64>>,
    peers: Vec<P>,
    log: EventLog,
    round: u64,
    terminated: bool,
) -> SyncOutcome<P> {
    let honest: Vec<bool> = status.iter().map(|s| *s == PeerStatus::Honest).collect();
    let outputs: Vec<Option<BitString>> = peers.iter().map(|p| p.output().cloned()).collect();
    let correct = terminated
        && outputs
            .iter()
            .zip(&honest)
            .filter(|(_, &h)| h)
            .all(|(o, _)| o.as_ref() == Some(input.as_bits()));
    let t = decided_round.iter().flatten().copied().max().unwrap_or(round);
    let metrics = finish_metrics(source.counts(), &honest, Stamp::Round(t), &counter, correct, cfg.seed);
    SyncOutcome {
        metrics,
        outputs,
        status,
        decided_round,
        peers,
        log,
    }
}

pub(crate) fn recipients_json(to: &Recipients) -> Value {
    match to {
        Recipients::All => json!("all"),
        Recipients::One(p) => json!(p.get()),
        Recipients::Set(v) => json!(v.iter().map(|p| p.get()).collect::<Vec<_>>()),
    }
}
