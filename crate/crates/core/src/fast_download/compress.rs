//! Running a protocol in the broadcast model by sending transcripts instead
//! of messages.
//!
//! Each round a peer broadcasts only the random values it drew and the bits
//! it queried. Every peer keeps a replica of every other peer one round
//! behind and replays it from its transcript; the replay yields the
//! messages that peer would have sent, which then form the real peer's
//! inbox.

use std::rc::Rc;

use rand::RngCore;

use crate::bits::BitString;
use crate::error::SimError;
use crate::metrics::Recipients;
use crate::model::PeerId;
use crate::sync_sim::{Answers, Delivery, Inbox, MessageCtx, Outbox, Payload, QueryCtx, QueryPort, SyncPeer, Wire};

/// One value taken from a peer's random stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Draw {
    U32(u32),
    U64(u64),
    Bytes(Vec<u8>),
}

impl Draw {
    pub fn bits(&self) -> u64 {
        match self {
            Draw::U32(_) => 32,
            Draw::U64(_) => 64,
            Draw::Bytes(b) => 8 * b.len() as u64,
        }
    }
}

/// Everything a peer did in one round: r random bits and Q query answers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    pub draws: Vec<Draw>,
    pub answers: Vec<bool>,
}

impl Transcript {
    pub fn random_bits(&self) -> u64 {
        self.draws.iter().map(Draw::bits).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty() && self.answers.is_empty()
    }
}

impl Payload for Transcript {
    fn payload_bits(&self, _: Wire) -> u64 {
        self.random_bits() + self.answers.len() as u64
    }
}

/// Forwards to a real stream and logs every value handed out.
pub struct RecordingRng<'a> {
    inner: &'a mut dyn RngCore,
    log: &'a mut Vec<Draw>,
}

impl<'a> RecordingRng<'a> {
    pub fn new(inner: &'a mut dyn RngCore, log: &'a mut Vec<Draw>) -> Self {
        RecordingRng { inner, log }
    }
}

impl RngCore for RecordingRng<'_> {
    fn next_u32(&mut self) -> u32 {
        let v = self.inner.next_u32();
        self.log.push(Draw::U32(v));
        v
    }

    fn next_u64(&mut self) -> u64 {
        let v = self.inner.next_u64();
        self.log.push(Draw::U64(v));
        v
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest);
        self.log.push(Draw::Bytes(dest.to_vec()));
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

/// Hands out logged values in order. Asking for a different kind of value
/// than was logged means the replay diverged.
pub struct ReplayRng<'a> {
    draws: &'a [Draw],
    pos: usize,
    diverged: bool,
}

impl<'a> ReplayRng<'a> {
    pub fn new(draws: &'a [Draw]) -> Self {
        ReplayRng {
            draws,
            pos: 0,
            diverged: false,
        }
    }

    fn next(&mut self) -> Option<&'a Draw> {
        let d = self.draws.get(self.pos);
        self.pos += 1;
        if d.is_none() {
            self.diverged = true;
        }
        d
    }

    /// True when every logged value was used, each as the kind it was drawn.
    pub fn finished_cleanly(&self) -> bool {
        !self.diverged && self.pos == self.draws.len()
    }
}

impl RngCore for ReplayRng<'_> {
    fn next_u32(&mut self) -> u32 {
        match self.next() {
            Some(Draw::U32(v)) => *v,
            _ => {
                self.diverged = true;
                0
            }
        }
    }

    fn next_u64(&mut self) -> u64 {
        match self.next() {
            Some(Draw::U64(v)) => *v,
            _ => {
                self.diverged = true;
                0
            }
        }
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        match self.next() {
            Some(Draw::Bytes(b)) if b.len() == dest.len() => dest.copy_from_slice(b),
            _ => self.diverged = true,
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

type Sent<M> = Vec<(Recipients, M)>;

/// What `peer` reads when every peer's sends of the last round are `sent`
/// (indexed by sender), in the scheduler's delivery order.
fn inbox_from<M: Clone>(peer: PeerId, round: u64, sent: &[Sent<M>]) -> Inbox<M> {
    let mut shared = Vec::new();
    let mut direct = Vec::new();
    for (idx, items) in sent.iter().enumerate() {
        let from = PeerId::from_index(idx);
        for (to, msg) in items {
            let d = Delivery {
                from,
                sent_round: round,
                msg: msg.clone(),
            };
            match to {
                Recipients::All => shared.push(d),
                other if other.contains(peer) => direct.push(d),
                _ => {}
            }
        }
    }
    Inbox::new(Rc::new(shared), direct)
}

/// A peer of protocol `P` that talks only in transcripts.
#[derive(Clone, Debug)]
pub struct Compressed<P: SyncPeer> {
    me: PeerId,
    inner: P,
    replicas: Vec<P>,
    /// Every peer's sends in the round before last, as reconstructed.
    older: Vec<Sent<P::Msg>>,
    own_last: Sent<P::Msg>,
    draws: Vec<Draw>,
    sent: Vec<(u64, Transcript)>,
}

impl<P: SyncPeer + Clone> Compressed<P> {
    /// Wraps `peers[me]` and keeps copies of all of them as replicas.
    pub fn new(me: PeerId, peers: &[P]) -> Self {
        Compressed {
            me,
            inner: peers[me.index()].clone(),
            replicas: peers.to_vec(),
            older: vec![Vec::new(); peers.len()],
            own_last: Vec::new(),
            draws: Vec::new(),
            sent: Vec::new(),
        }
    }
}

impl<P: SyncPeer> Compressed<P> {
    pub fn inner(&self) -> &P {
        &self.inner
    }

    /// The replica of `peer`; equals that peer's state one round earlier.
    pub fn replica(&self, peer: PeerId) -> &P {
        &self.replicas[peer.index()]
    }

    /// (round, transcript) for every transcript this peer broadcast.
    pub fn sent(&self) -> &[(u64, Transcript)] {
        &self.sent
    }

    /// Replays replica `idx` through `round` and returns what it sent.
    fn replay(&mut self, idx: usize, round: u64, t: &Transcript) -> Result<Sent<P::Msg>, SimError> {
        let peer = PeerId::from_index(idx);
        let inbox = inbox_from(peer, round.saturating_sub(1), &self.older);
        let mut rng = ReplayRng::new(&t.draws);
        let mut port = QueryPort::default();
        let mut notes = Vec::new();
        self.replicas[idx].on_query(&mut QueryCtx::new(round, peer, &inbox, &mut rng, &mut port, Some(&mut notes)))?;
        let mut bits = t.answers.iter().copied();
        let mut ranges = Vec::new();
        for &(start, len) in port.requests() {
            let mut s = BitString::zeros(len);
            for i in 0..len {
                let b = bits.next().ok_or_else(|| {
                    SimError::invariant(format!("transcript of {peer} for round {round} is short of query answers"))
                })?;
                s.set(i, b);
            }
            ranges.push((start, s));
        }
        if bits.next().is_some() {
            return Err(SimError::invariant(format!(
                "transcript of {peer} for round {round} has unused query answers"
            )));
        }
        let answers = Answers::from_ranges(ranges);
        let mut out = Outbox::default();
        self.replicas[idx].on_message(&mut MessageCtx::new(round, peer, &answers, &mut rng, &mut out, Some(&mut notes)))?;
        if !rng.finished_cleanly() {
            return Err(SimError::invariant(format!(
                "replay of {peer} in round {round} did not use its random draws as recorded"
            )));
        }
        Ok(out.into_items())
    }
}

impl<P> SyncPeer for Compressed<P>
where
    P: SyncPeer,
    P::Msg: Clone,
{
    type Msg = Transcript;

    fn on_query(&mut self, ctx: &mut QueryCtx<'_, Transcript>) -> Result<(), SimError> {
        let k = self.replicas.len();
        let mut last: Vec<Sent<P::Msg>> = vec![Vec::new(); k];
        if ctx.round > 1 {
            let mut transcripts: Vec<Option<&Transcript>> = vec![None; k];
            for d in ctx.inbox.iter() {
                transcripts[d.from.index()] = Some(&d.msg);
            }
            let empty = Transcript::default();
            for (idx, slot) in last.iter_mut().enumerate() {
                if idx == self.me.index() {
                    *slot = std::mem::take(&mut self.own_last);
                    continue;
                }
                let t = transcripts[idx].unwrap_or(&empty);
                *slot = self.replay(idx, ctx.round - 1, t)?;
            }
        }
        let inbox = inbox_from(self.me, ctx.round - 1, &last);
        self.older = last;
        self.draws.clear();
        let mut notes = Vec::new();
        {
            let mut rng = RecordingRng::new(&mut *ctx.rng, &mut self.draws);
            let mut qctx = QueryCtx::new(ctx.round, self.me, &inbox, &mut rng, &mut *ctx.port, Some(&mut notes));
            self.inner.on_query(&mut qctx)?;
        }
        for v in notes {
            ctx.note(v);
        }
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut MessageCtx<'_, Transcript>) -> Result<(), SimError> {
        let mut out = Outbox::default();
        let mut notes = Vec::new();
        {
            let mut rng = RecordingRng::new(&mut *ctx.rng, &mut self.draws);
            let mut mctx = MessageCtx::new(ctx.round, self.me, ctx.answers, &mut rng, &mut out, Some(&mut notes));
            self.inner.on_message(&mut mctx)?;
        }
        for v in notes {
            ctx.note(v);
        }
        self.own_last = out.into_items();
        let mut answers = Vec::new();
        for (_, bits) in ctx.answers.ranges() {
            answers.extend(bits.iter());
        }
        let t = Transcript {
            draws: std::mem::take(&mut self.draws),
            answers,
        };
        if !t.is_empty() {
            self.sent.push((ctx.round, t.clone()));
            ctx.send_all(t);
        }
        Ok(())
    }

    fn output(&self) -> Option<&BitString> {
        self.inner.output()
    }
}

/// Wraps every peer of a run.
pub fn compress_all<P: SyncPeer + Clone>(peers: Vec<P>) -> Vec<Compressed<P>> {
    PeerId::all(peers.len()).map(|p| Compressed::new(p, &peers)).collect()
}
