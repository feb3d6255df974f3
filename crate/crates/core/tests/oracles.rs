//! Reference values computed independently of the code under test.

use std::collections::{BTreeMap, BTreeSet};

use dr_core::adversaries::mirror::compute_target_index;
use dr_core::adversaries::{CrashPoint, FaultPlan, SkipProfile};
use dr_core::byz_download::{derive_alg1_params, toss_query_coins, Alg1Params, Alg1Plan};
use dr_core::fast_download::{two_round_plan, TwoRoundPlan};
use dr_core::model::{AdversaryId, ProtocolId, Ratio, SimConfig};
use dr_core::rng::stream;
use dr_core::runner::{random_input, run, run_with};
use dr_core::sifting::{build_decision_tree, determine, frequent_strings, StringMultiset, Validation};
use dr_core::{BitString, PeerId, SimError};
use num_bigint::BigInt;
use num_rational::BigRational;

fn bits(s: &str) -> BitString {
    BitString::parse(s).expect("0/1 text")
}

fn range(n: usize, gk: u64, delta: i64) -> Option<(u32, u32)> {
    match derive_alg1_params(n, gk, delta).unwrap() {
        Alg1Plan::Run(p) => Some((p.first_round, p.last_round)),
        Alg1Plan::QueryAll => None,
    }
}

#[test]
fn epoch_round_ranges() {
    // f = ⌈δ + lg lg n⌉, last = ⌈lg γk − lg lg n⌉.
    assert_eq!(range(65536, 1024, 0), Some((4, 6)));
    assert_eq!(range(4, 16, 1), Some((2, 3)));
    // 2·64 = 128 ≤ 16² = 256.
    assert_eq!(range(65536, 64, 0), None);
}

#[test]
fn coin_count_has_mean_one_at_gamma_k_equal_two_to_j() {
    let j = 8;
    let params = Alg1Params {
        delta: 0,
        first_round: 2,
        last_round: 12,
        gamma_k: 1 << j,
    };
    let mut rng = stream(77);
    let samples = 100_000;
    let total: u64 = (0..samples).map(|_| toss_query_coins(&mut rng, &params, j).unwrap()).sum();
    let mean = total as f64 / samples as f64;
    let p = 1.0 / (1u64 << j) as f64;
    let sigma = ((1u64 << j) as f64 * p * (1.0 - p) / samples as f64).sqrt();
    assert!((mean - 1.0).abs() <= 3.0 * sigma, "mean {mean}, sigma {sigma}");
}

#[test]
fn alg1_honest_run_matches_query_all() {
    // γk = 32 with β = 0.
    let cfg = SimConfig::new(ProtocolId::Alg1, 64, 32, Ratio::from_integer(0), 3);
    let r = run(&cfg).unwrap();
    assert!(r.metrics.correct);
    assert!(r.extras.get("fallback").is_none());
    let base = SimConfig::new(ProtocolId::QueryAll, 64, 32, Ratio::from_integer(0), 3);
    assert!(run(&base).unwrap().metrics.correct);
}

#[test]
fn flooded_string_joins_the_frequent_set() {
    let truth = bits("0110");
    let fake = bits("0111");
    let mut s = StringMultiset::new(4);
    s.add(truth.clone(), 6).unwrap();
    s.add(fake.clone(), 3).unwrap();
    let t = Ratio::from_integer(4);
    let fs = frequent_strings(&s, t).unwrap();
    assert_eq!(fs, vec![truth.clone()]);
    assert_eq!(build_decision_tree(&fs).unwrap().internal_count(), 0);

    s.add(fake.clone(), 1).unwrap();
    let fs = frequent_strings(&s, t).unwrap();
    assert_eq!(fs.len(), 2);
    let tree = build_decision_tree(&fs).unwrap();
    assert_eq!(tree.internal_count(), 1);
    let (got, used) = determine(&tree, |i| truth.get(i), Validation::Queried).unwrap();
    assert_eq!((got, used), (truth, 1));
}

#[test]
fn walk_to_wrong_leaf_fails_full_validation() {
    let tree = build_decision_tree(&[bits("00"), bits("11")]).unwrap();
    let truth = bits("01");
    let err = determine(&tree, |i| truth.get(i), Validation::Full).unwrap_err();
    assert!(matches!(err, SimError::Inconsistency(_)), "{err}");
}

#[test]
fn uniform_skip_profile_target() {
    let (target, q) = compute_target_index(&SkipProfile::uniform(4, 4)).unwrap();
    let want = BigRational::new(BigInt::from(81), BigInt::from(256));
    // Ties resolve to the first index, numbered from 1.
    assert_eq!(target, 1);
    assert!(q.iter().all(|x| *x == want));
}

#[test]
fn two_round_widths() {
    let half = Ratio::new(1, 2);
    let cfg = SimConfig::new(ProtocolId::TwoRound, 4096, 20000, half, 0);
    assert_eq!(
        two_round_plan(&cfg),
        TwoRoundPlan::Split {
            phi: 2048,
            count: 2,
            t: Ratio::from_integer(2500)
        }
    );
    // γk = 500 < 64 ln 4096 ≈ 532.
    let cfg = SimConfig::new(ProtocolId::TwoRound, 4096, 1000, half, 0);
    assert_eq!(two_round_plan(&cfg), TwoRoundPlan::QueryAll);
    // γ = 1, k = 1200: φ = ⌈32 ln 4096 · 4096/1200⌉ = ⌈908.5⌉.
    let cfg = SimConfig::new(ProtocolId::TwoRound, 4096, 1200, Ratio::from_integer(0), 0);
    match two_round_plan(&cfg) {
        TwoRoundPlan::Split { phi, .. } => assert_eq!(phi, 909),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn two_round_flood_second_round_stays_under_k_over_t() {
    let cfg = SimConfig::new(ProtocolId::TwoRound, 512, 600, Ratio::new(1, 4), 5).with_adversary(AdversaryId::IntervalFlood);
    let r = run(&cfg).unwrap();
    assert!(r.metrics.correct);
    assert!(r.extras["second_max"] >= 1.0);
    assert!(r.extras["second_max"] <= 600.0 / r.extras["threshold"]);
}

#[test]
fn honest_doubling_needs_no_determine_queries() {
    let cfg = SimConfig::new(ProtocolId::LogN, 1024, 400, Ratio::new(1, 4), 1);
    let r = run(&cfg).unwrap();
    assert!(r.metrics.correct);
    assert_eq!(r.extras["determine_mean"], 0.0);
}

#[test]
fn boosting_halves_the_overloaded_set() {
    for seed in 0..3 {
        let cfg = SimConfig::new(ProtocolId::Boosted, 1024, 400, Ratio::new(1, 4), seed).with_adversary(AdversaryId::IntervalFlood);
        let r = run(&cfg).unwrap();
        assert_eq!(r.extras["halving_ok"], 1.0);
        assert_eq!(r.extras["labeled_ok"], 1.0);
    }
}

#[test]
fn single_crash_protocol_query_counts() {
    let cfg = SimConfig::new(ProtocolId::AsyncOneCrash, 12, 4, Ratio::new(1, 4), 0);
    let input = random_input(&cfg);
    let free = run_with(&cfg, &input, &FaultPlan::none()).unwrap();
    assert!(free.metrics.correct);
    assert!(free.metrics.q_per_peer.values().all(|&q| q == 3));
    // n/k + ⌈n/(k(k−1))⌉ = 3 + 1 when a peer crashes before sending.
    for p in 0..4 {
        let cp = CrashPoint::Async {
            batch: 0,
            delivered: BTreeSet::new(),
        };
        let plan = FaultPlan::crashes(BTreeMap::from([(PeerId::from_index(p), cp)]));
        let r = run_with(&cfg, &input, &plan).unwrap();
        assert!(r.metrics.correct);
        assert_eq!(r.metrics.q_max, 4);
    }
}

#[test]
fn f_crash_unblock_keeps_outputs() {
    for seed in 0..4 {
        let base = SimConfig::new(ProtocolId::AsyncFCrash, 1024, 8, Ratio::new(1, 4), seed).with_adversary(AdversaryId::SlowDelivery);
        let on = run(&base.clone().with_constant("unblock", Ratio::from_integer(1))).unwrap();
        let off = run(&base.with_constant("unblock", Ratio::from_integer(0))).unwrap();
        assert!(on.metrics.correct && off.metrics.correct);
        assert!(on.metrics.t <= off.metrics.t);
    }
}
