//! Byzantine-tolerant download with epochs of doubling coin-toss rounds,
//! gossip/query learning and blacklisting.
//!
//! Epoch i learns bit i. Its rounds are j = f..=last. In round j a peer that
//! has not voted yet either adopts a value whose opposition is below
//! 2^j/4 (gossip learning, not allowed in round f) or tosses 2^j coins of
//! bias 1/γk and queries the bit on any head (query learning; the last
//! round always queries). It then votes, and blacklists every peer whose
//! vote for the epoch disagrees with its own.

use std::collections::BTreeSet;

use num_traits::ToPrimitive;
use rand::RngCore;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;
use serde_json::json;

use crate::adversaries::strategies::Contrarian;
use crate::bits::{BitString, PartialBits};
use crate::error::SimError;
use crate::model::{PeerId, Ratio, SimConfig};
use crate::sync_sim::{MessageCtx, Payload, QueryCtx, SyncPeer, Wire};

/// Round bounds of one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Alg1Params {
    pub delta: i64,
    pub first_round: u32,
    pub last_round: u32,
    pub gamma_k: u64,
}

impl Alg1Params {
    pub fn rounds_per_epoch(&self) -> u64 {
        (self.last_round - self.first_round + 1) as u64
    }

    /// Gossip threshold ν·2^j with ν = 1/4.
    pub fn threshold(&self, j: u32) -> Ratio {
        Ratio::new(1i64 << j, 4)
    }

    /// (epoch, j) of a global round, epochs counted from 1.
    pub fn position(&self, round: u64) -> (usize, u32) {
        let l = self.rounds_per_epoch();
        let epoch = ((round - 1) / l + 1) as usize;
        let j = self.first_round + ((round - 1) % l) as u32;
        (epoch, j)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Alg1Plan {
    Run(Alg1Params),
    /// Too few honest peers for the epoch scheme; query everything.
    QueryAll,
}

/// ⌈x⌉ that treats values within 1e-9 of an integer as that integer, so
/// powers of two give exact results.
fn ceil_exact(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as i64
    } else {
        x.ceil() as i64
    }
}

/// Derives the round range, or the query-all fallback when
/// 2γk ≤ 2^δ·lg²n or the range is empty.
pub fn derive_alg1_params(n: usize, gamma_k: u64, delta: i64) -> Result<Alg1Plan, SimError> {
    if n < 2 || gamma_k == 0 {
        return Err(SimError::config("the epoch scheme needs n >= 2 and at least one honest peer"));
    }
    let lg_n = (n as f64).log2();
    let lglg = lg_n.log2();
    let lhs = 2.0 * gamma_k as f64;
    let rhs = 2f64.powi(delta as i32) * lg_n * lg_n;
    if lhs <= rhs + 1e-9 * rhs {
        return Ok(Alg1Plan::QueryAll);
    }
    let f = ceil_exact(delta as f64 + lglg);
    let last = ceil_exact((gamma_k as f64).log2() - lglg);
    if f < 1 {
        return Err(SimError::config(format!("first round {f} must be at least 1; raise delta")));
    }
    if f > last {
        return Ok(Alg1Plan::QueryAll);
    }
    Ok(Alg1Plan::Run(Alg1Params {
        delta,
        first_round: f as u32,
        last_round: last as u32,
        gamma_k,
    }))
}

/// Plan for a config: δ comes from the `delta` constant (default 0).
pub fn alg1_plan(cfg: &SimConfig) -> Result<Alg1Plan, SimError> {
    let delta = cfg.constant("delta", Ratio::from_integer(0));
    if !delta.is_integer() {
        return Err(SimError::config("delta must be an integer"));
    }
    derive_alg1_params(cfg.n, cfg.honest_floor() as u64, delta.to_integer())
}

/// Heads among 2^j coins of bias 1/γk. The last round is always heads.
pub fn toss_query_coins(rng: &mut dyn RngCore, params: &Alg1Params, j: u32) -> Result<u64, SimError> {
    if j < params.first_round || j > params.last_round {
        return Err(SimError::config(format!("round {j} outside the epoch")));
    }
    if j == params.last_round {
        return Ok(1);
    }
    sample_heads(rng, 1u64 << j, params.gamma_k)
}

pub(crate) fn sample_heads(rng: &mut dyn RngCore, coins: u64, gamma_k: u64) -> Result<u64, SimError> {
    let p = 1.0 / gamma_k as f64;
    let dist = Binomial::new(coins, p).map_err(|e| SimError::config(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// A vote for the current epoch's bit. Epoch and sender are implicit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vote(pub bool);

impl Payload for Vote {
    fn payload_bits(&self, _: Wire) -> u64 {
        1
    }
}

/// What one peer saw in one epoch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EpochStat {
    /// Learning round ℓ(i).
    pub learn_round: u32,
    pub queried: bool,
    /// Peers blacklisted by this peer during the epoch, B(i).
    pub blacklisted: u64,
    /// Coins flipped, R_i.
    pub coins: u64,
    /// Heads among them, S_i.
    pub heads: u64,
    /// (COUNT⁰, COUNT¹) when the bit was learned.
    pub counts: (u64, u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alg1Peer {
    me: PeerId,
    params: Alg1Params,
    n: usize,
    res: PartialBits,
    blacklist: BTreeSet<PeerId>,
    /// Blacklist membership by peer index.
    banned: Vec<bool>,
    /// Votes by peer index for the current epoch and the one before (late
    /// arrivals).
    votes: Vec<Option<bool>>,
    prev_votes: Vec<Option<bool>>,
    epoch: usize,
    voted: bool,
    pending_vote: Option<bool>,
    querying: bool,
    stats: Vec<EpochStat>,
    output: Option<BitString>,
}

impl Alg1Peer {
    pub fn new(me: PeerId, n: usize, params: Alg1Params) -> Self {
        Alg1Peer {
            me,
            params,
            n,
            res: PartialBits::unknown(n),
            blacklist: BTreeSet::new(),
            banned: Vec::new(),
            votes: Vec::new(),
            prev_votes: Vec::new(),
            epoch: 0,
            voted: false,
            pending_vote: None,
            querying: false,
            stats: vec![EpochStat::default(); n],
            output: None,
        }
    }

    pub fn blacklist(&self) -> &BTreeSet<PeerId> {
        &self.blacklist
    }

    pub fn stats(&self) -> &[EpochStat] {
        &self.stats
    }

    pub fn params(&self) -> &Alg1Params {
        &self.params
    }

    fn counts(&self) -> (u64, u64) {
        let mut c = (0, 0);
        for (i, v) in self.votes.iter().enumerate() {
            match v {
                Some(b) if !self.is_banned(i) => {
                    if *b {
                        c.1 += 1;
                    } else {
                        c.0 += 1;
                    }
                }
                _ => {}
            }
        }
        c
    }

    fn is_banned(&self, i: usize) -> bool {
        self.banned.get(i).copied().unwrap_or(false)
    }

    fn ban(&mut self, p: PeerId, epoch: usize) {
        if self.banned.len() <= p.index() {
            self.banned.resize(p.index() + 1, false);
        }
        self.banned[p.index()] = true;
        if self.blacklist.insert(p) {
            self.stats[epoch - 1].blacklisted += 1;
        }
    }

    /// Our own bit for `epoch` if we have already voted in it.
    fn my_vote(&self, epoch: usize) -> Option<bool> {
        if epoch == 0 || epoch > self.n || (epoch == self.epoch && !self.voted) {
            return None;
        }
        self.res.get(epoch - 1)
    }

    /// Records a vote for `epoch` (current or previous) from `from`; `mine`
    /// is our vote in that epoch, if any.
    fn ingest(&mut self, from: PeerId, epoch: usize, b: bool, mine: Option<bool>) {
        let idx = from.index();
        if from == self.me || self.is_banned(idx) || epoch == 0 || epoch > self.n {
            return;
        }
        let table = if epoch == self.epoch {
            &mut self.votes
        } else if epoch + 1 == self.epoch {
            &mut self.prev_votes
        } else {
            return;
        };
        if table.len() <= idx {
            table.resize(idx + 1, None);
        }
        match table[idx] {
            Some(prev) if prev != b => self.ban(from, epoch),
            Some(_) => {}
            None => {
                table[idx] = Some(b);
                if mine.is_some_and(|m| m != b) {
                    self.ban(from, epoch);
                }
            }
        }
    }

    fn blacklist_contradictors(&mut self) {
        let Some(mine) = self.res.get(self.epoch - 1) else { return };
        for i in 0..self.votes.len() {
            if self.votes[i].is_some_and(|b| b != mine) && !self.is_banned(i) {
                self.ban(PeerId::from_index(i), self.epoch);
            }
        }
    }
}

impl SyncPeer for Alg1Peer {
    type Msg = Vote;

    fn on_query(&mut self, ctx: &mut QueryCtx<'_, Vote>) -> Result<(), SimError> {
        let (epoch, j) = self.params.position(ctx.round);
        if epoch != self.epoch {
            std::mem::swap(&mut self.prev_votes, &mut self.votes);
            self.votes.iter_mut().for_each(|v| *v = None);
            self.epoch = epoch;
            self.voted = false;
        }
        let mine = [self.my_vote(epoch), self.my_vote(epoch.saturating_sub(1))];
        // Deliveries arrive grouped by send round; skip the division for repeats.
        let mut last = (0, 0);
        for d in ctx.inbox.iter() {
            if d.sent_round != last.0 {
                last = (d.sent_round, self.params.position(d.sent_round).0);
            }
            let e = last.1;
            let m = if e == epoch { mine[0] } else { mine[1] };
            self.ingest(d.from, e, d.msg.0, m);
        }
        if epoch > self.n || self.voted {
            return Ok(());
        }
        let i = epoch;
        let stat_idx = i - 1;
        let (c0, c1) = self.counts();
        let thr = self.params.threshold(j);
        let below = |c: u64| Ratio::from_integer(c as i64) < thr;
        if j != self.params.first_round && (below(c0) || below(c1)) {
            // Gossip learning: the side with the weaker opposition wins.
            let pick = match (below(c1), below(c0)) {
                (true, false) => Some(false),
                (false, true) => Some(true),
                _ => match c0.cmp(&c1) {
                    std::cmp::Ordering::Greater => Some(false),
                    std::cmp::Ordering::Less => Some(true),
                    std::cmp::Ordering::Equal => None,
                },
            };
            if let Some(b) = pick {
                self.res.set(i - 1, b);
                self.pending_vote = Some(b);
                self.voted = true;
                self.stats[stat_idx].learn_round = j;
                self.stats[stat_idx].counts = (c0, c1);
                return Ok(());
            }
        }
        let heads = if j == self.params.last_round {
            1
        } else {
            let h = sample_heads(ctx.rng, 1u64 << j, self.params.gamma_k)?;
            self.stats[stat_idx].coins += 1u64 << j;
            self.stats[stat_idx].heads += h;
            h
        };
        if heads > 0 {
            ctx.query(i);
            self.querying = true;
            self.voted = true;
            self.stats[stat_idx].learn_round = j;
            self.stats[stat_idx].queried = true;
            self.stats[stat_idx].counts = (c0, c1);
        }
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut MessageCtx<'_, Vote>) -> Result<(), SimError> {
        if self.epoch == 0 || self.epoch > self.n {
            return Ok(());
        }
        if self.querying {
            self.querying = false;
            let b = ctx
                .answers
                .bit(self.epoch)
                .ok_or_else(|| SimError::invariant("queried bit missing from answers"))?;
            self.res.set(self.epoch - 1, b);
            self.pending_vote = Some(b);
        }
        if let Some(b) = self.pending_vote.take() {
            ctx.send_all(Vote(b));
            let s = &self.stats[self.epoch - 1];
            ctx.note_with(|| {
                json!({
                    "epoch": self.epoch,
                    "learn_round": s.learn_round,
                    "queried": s.queried,
                    "coins": s.coins,
                    "heads": s.heads,
                })
            });
        }
        if self.voted {
            self.blacklist_contradictors();
        }
        if self.output.is_none() && self.res.is_complete() {
            self.output = self.res.to_complete();
        }
        Ok(())
    }

    fn output(&self) -> Option<&BitString> {
        self.output.as_ref()
    }
}

pub fn alg1_peers(cfg: &SimConfig, params: &Alg1Params) -> Vec<Alg1Peer> {
    PeerId::all(cfg.k).map(|p| Alg1Peer::new(p, cfg.n, params.clone())).collect()
}

pub fn contrarian_for(params: &Alg1Params) -> Contrarian {
    Contrarian::new(params.clone())
}

/// Checks (2^j/γk)(1 − 1/(2 lg n)) < P_j < 2^j/γk in exact arithmetic,
/// where P_j = 1 − (1 − 1/γk)^{2^j} is the chance of at least one head.
/// `n` must be a power of two.
pub fn p_j_bounds_hold(gamma_k: u64, n: u64, j: u32) -> bool {
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::One;
    let gk = BigInt::from(gamma_k);
    let one = BigRational::one();
    let q = one.clone() - BigRational::new(BigInt::one(), gk.clone());
    let p = one.clone() - pow_big(&q, 1u64 << j);
    let upper = BigRational::new(BigInt::from(1u64 << j), gk);
    let lg = (n as f64).log2();
    assert!(lg.fract() == 0.0, "n must be a power of two");
    let lg = BigInt::from(lg.to_u64().expect("small"));
    let lower = upper.clone() * (one - BigRational::new(BigInt::one(), BigInt::from(2) * lg));
    lower < p && p < upper
}

fn pow_big(base: &num_rational::BigRational, mut e: u64) -> num_rational::BigRational {
    use num_traits::One;
    let mut acc = num_rational::BigRational::one();
    let mut b = base.clone();
    while e > 0 {
        if e & 1 == 1 {
            acc *= &b;
        }
        b = &b * &b;
        e >>= 1;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn run(n: usize, gk: u64, delta: i64) -> (u32, u32) {
        match derive_alg1_params(n, gk, delta).unwrap() {
            Alg1Plan::Run(p) => (p.first_round, p.last_round),
            Alg1Plan::QueryAll => panic!("unexpected fallback"),
        }
    }

    #[test]
    fn round_range_examples() {
        assert_eq!(run(65536, 1024, 0), (4, 6));
        assert_eq!(run(4, 16, 1), (2, 3));
        assert_eq!(derive_alg1_params(65536, 64, 0).unwrap(), Alg1Plan::QueryAll);
    }

    #[test]
    fn last_round_forces_heads() {
        let p = Alg1Params { delta: 0, first_round: 4, last_round: 6, gamma_k: 1 << 20 };
        let mut rng = stream(1);
        assert_eq!(toss_query_coins(&mut rng, &p, 6).unwrap(), 1);
        assert!(toss_query_coins(&mut rng, &p, 3).is_err());
    }

    #[test]
    fn round_positions() {
        let p = Alg1Params { delta: 0, first_round: 4, last_round: 6, gamma_k: 1024 };
        assert_eq!(p.position(1), (1, 4));
        assert_eq!(p.position(3), (1, 6));
        assert_eq!(p.position(4), (2, 4));
    }

    #[test]
    fn p_j_example() {
        assert!(p_j_bounds_hold(1024, 65536, 6));
    }
}
