//! The mirror attack on single-round protocols.
//!
//! Half the peers (minus one) run the protocol honestly but on the input
//! with one bit flipped. A peer that skipped that bit then sees the same
//! messages whether the real input is X₀ or X₁, so it must be wrong on one.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::seq::index::sample;
use rand::{Rng, RngCore};
use serde::Serialize;

use crate::bits::BitString;
use crate::error::SimError;
use crate::model::{InputVector, PeerId, Ratio};
use crate::rng::{derive, peer_stream, stream};

/// `p[v][i]`: probability that peer v does not query bit i+1.
#[derive(Clone, Debug, PartialEq)]
pub struct SkipProfile {
    pub p: Vec<Vec<Ratio>>,
}

impl SkipProfile {
    pub fn uniform(k: usize, n: usize) -> Self {
        SkipProfile {
            p: vec![vec![Ratio::new(1, n as i64); n]; k],
        }
    }

    /// Every row of a protocol that skips at least one bit sums to ≥ 1.
    pub fn check_rows(&self) -> Result<(), SimError> {
        for (v, row) in self.p.iter().enumerate() {
            let sum: Ratio = row.iter().sum();
            if sum < Ratio::one() || row.iter().any(|x| *x < Ratio::zero() || *x > Ratio::one()) {
                return Err(SimError::config(format!("skip profile row {} is not a valid skip distribution", v + 1)));
            }
        }
        Ok(())
    }
}

fn big(r: Ratio) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

/// Index ℓ (1-based) minimizing q(i) = Π_v (1 − p_v(i)), smallest on ties,
/// together with every q(i).
pub fn compute_target_index(profile: &SkipProfile) -> Result<(usize, Vec<BigRational>), SimError> {
    let n = profile.p.first().map_or(0, Vec::len);
    if n == 0 || profile.p.iter().any(|row| row.len() != n) {
        return Err(SimError::config("skip profile must be a non-empty rectangular matrix"));
    }
    let q: Vec<BigRational> = (0..n)
        .map(|i| {
            profile
                .p
                .iter()
                .fold(BigRational::one(), |acc, row| acc * (BigRational::one() - big(row[i])))
        })
        .collect();
    let mut best = 0;
    for i in 1..n {
        if q[i] < q[best] {
            best = i;
        }
    }
    Ok((best + 1, q))
}

/// A one-round protocol: query, send one message to everyone, decide.
pub trait SingleRoundProtocol {
    type Msg: Clone + PartialEq + std::fmt::Debug;

    /// Largest number of bits any peer may query.
    fn max_queries(&self, n: usize) -> usize;

    fn skip_profile(&self, k: usize, n: usize) -> SkipProfile;

    /// 1-based indices peer `v` queries, drawn from its own stream.
    fn choose_queries(&self, v: PeerId, n: usize, rng: &mut dyn RngCore) -> Vec<usize>;

    fn message(&self, v: PeerId, n: usize, answers: &[(usize, bool)]) -> Self::Msg;

    fn decide(&self, v: PeerId, n: usize, answers: &[(usize, bool)], received: &BTreeMap<PeerId, Self::Msg>) -> BitString;
}

/// Each peer skips one uniformly random bit and reports the rest. A peer
/// fills its own gap by majority over the reports; ties go to 0.
pub struct SkipOne;

impl SingleRoundProtocol for SkipOne {
    type Msg = Vec<Option<bool>>;

    fn max_queries(&self, n: usize) -> usize {
        n - 1
    }

    fn skip_profile(&self, k: usize, n: usize) -> SkipProfile {
        SkipProfile::uniform(k, n)
    }

    fn choose_queries(&self, _: PeerId, n: usize, rng: &mut dyn RngCore) -> Vec<usize> {
        let skip = rng.gen_range(1..=n);
        (1..=n).filter(|&i| i != skip).collect()
    }

    fn message(&self, _: PeerId, n: usize, answers: &[(usize, bool)]) -> Self::Msg {
        let mut m = vec![None; n];
        for &(i, b) in answers {
            m[i - 1] = Some(b);
        }
        m
    }

    fn decide(&self, _: PeerId, n: usize, answers: &[(usize, bool)], received: &BTreeMap<PeerId, Self::Msg>) -> BitString {
        let mut out = BitString::zeros(n);
        let mut known = vec![false; n];
        for &(i, b) in answers {
            out.set(i - 1, b);
            known[i - 1] = true;
        }
        for i in 0..n {
            if known[i] {
                continue;
            }
            let (mut ones, mut zeros) = (0, 0);
            for m in received.values() {
                match m.get(i).copied().flatten() {
                    Some(true) => ones += 1,
                    Some(false) => zeros += 1,
                    None => {}
                }
            }
            out.set(i, ones > zeros);
        }
        out
    }
}

/// Asks for every bit. Not in the attacked class.
pub struct QueryEverything;

impl SingleRoundProtocol for QueryEverything {
    type Msg = ();

    fn max_queries(&self, n: usize) -> usize {
        n
    }

    fn skip_profile(&self, k: usize, n: usize) -> SkipProfile {
        SkipProfile {
            p: vec![vec![Ratio::zero(); n]; k],
        }
    }

    fn choose_queries(&self, _: PeerId, n: usize, _: &mut dyn RngCore) -> Vec<usize> {
        (1..=n).collect()
    }

    fn message(&self, _: PeerId, _: usize, _: &[(usize, bool)]) {}

    fn decide(&self, _: PeerId, n: usize, answers: &[(usize, bool)], _: &BTreeMap<PeerId, ()>) -> BitString {
        let mut out = BitString::zeros(n);
        for &(i, b) in answers {
            out.set(i - 1, b);
        }
        out
    }
}

/// One execution EX(X, Byz, R): honest peers run on `x`, corrupt ones on
/// `x` with bit ℓ flipped. The random profile comes from `trial_seed`.
pub struct MirrorExecution<M> {
    pub queried: Vec<Vec<usize>>,
    pub sent: Vec<M>,
    pub outputs: BTreeMap<PeerId, BitString>,
    pub failed: bool,
}

pub fn mirror_execution<A: SingleRoundProtocol>(
    a: &A,
    k: usize,
    x: &InputVector,
    target: usize,
    byz: &BTreeSet<PeerId>,
    trial_seed: u64,
) -> MirrorExecution<A::Msg> {
    let n = x.len();
    let flipped = x.flipped(target);
    let mut queried = Vec::with_capacity(k);
    let mut answers = Vec::with_capacity(k);
    let mut sent = Vec::with_capacity(k);
    for v in PeerId::all(k) {
        let mut rng = peer_stream(trial_seed, v);
        let q = a.choose_queries(v, n, &mut rng);
        let view = if byz.contains(&v) { &flipped } else { x };
        let ans: Vec<(usize, bool)> = q.iter().map(|&i| (i, view.bit(i).expect("index in range"))).collect();
        sent.push(a.message(v, n, &ans));
        queried.push(q);
        answers.push(ans);
    }
    let mut outputs = BTreeMap::new();
    let mut failed = false;
    for v in PeerId::all(k).filter(|v| !byz.contains(v)) {
        let received: BTreeMap<PeerId, A::Msg> = PeerId::all(k)
            .filter(|u| *u != v)
            .map(|u| (u, sent[u.index()].clone()))
            .collect();
        let out = a.decide(v, n, &answers[v.index()], &received);
        failed |= &out != x.as_bits();
        outputs.insert(v, out);
    }
    MirrorExecution {
        queried,
        sent,
        outputs,
        failed,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackReport {
    pub target: usize,
    pub q_target: f64,
    pub trials: usize,
    pub failures_x0: usize,
    pub failures_x1: usize,
    /// Failure frequency on the worse of the two inputs.
    pub failure_rate: f64,
}

/// Estimates the failure probability of `a` under the mirror attack.
pub fn mirror_attack<A: SingleRoundProtocol>(
    a: &A,
    k: usize,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<AttackReport, SimError> {
    if k % 2 == 0 {
        return Err(SimError::config(format!("mirror attack needs an odd peer count, got k={k}")));
    }
    if trials == 0 {
        return Err(SimError::config("mirror attack needs at least one trial"));
    }
    if n == 0 {
        return Err(SimError::config("mirror attack needs n >= 1"));
    }
    if a.max_queries(n) >= n {
        return Err(SimError::config("protocol may query every bit; the attack needs at most n-1 queries per peer"));
    }
    let profile = a.skip_profile(k, n);
    profile.check_rows()?;
    let (target, q) = compute_target_index(&profile)?;
    let mut input_rng = stream(derive(seed, 0x7830));
    let mut x0 = InputVector::random(n, &mut input_rng);
    if x0.bit(target) == Some(true) {
        x0 = x0.flipped(target);
    }
    let x1 = x0.flipped(target);
    let byz_size = (k - 1) / 2;
    let (mut f0, mut f1) = (0, 0);
    for t in 0..trials {
        let trial_seed = derive(seed, t as u64 + 1);
        let byz = random_byz(k, byz_size, trial_seed);
        f0 += usize::from(mirror_execution(a, k, &x0, target, &byz, trial_seed).failed);
        f1 += usize::from(mirror_execution(a, k, &x1, target, &byz, trial_seed).failed);
    }
    let q_target = {
        let v = &q[target - 1];
        num_traits::ToPrimitive::to_f64(v).unwrap_or(f64::NAN)
    };
    Ok(AttackReport {
        target,
        q_target,
        trials,
        failures_x0: f0,
        failures_x1: f1,
        failure_rate: f0.max(f1) as f64 / trials as f64,
    })
}

/// Uniform corrupt set of `size` peers for one trial.
pub fn random_byz(k: usize, size: usize, trial_seed: u64) -> BTreeSet<PeerId> {
    let mut rng = stream(derive(trial_seed, 0x6279_7a));
    sample(&mut rng, k, size).into_iter().map(PeerId::from_index).collect()
}

/// Byz^inv = all peers except Byz and v.
pub fn inverse_byz(k: usize, byz: &BTreeSet<PeerId>, v: PeerId) -> BTreeSet<PeerId> {
    PeerId::all(k).filter(|u| !byz.contains(u) && *u != v).collect()
}
