//! Small fixed configurations shared by the benchmarks.

use dr_core::model::{AdversaryId, ProtocolId, Ratio, SimConfig};

/// One representative configuration per protocol, sized to run in milliseconds.
pub fn fixtures() -> Vec<(&'static str, SimConfig)> {
    let quarter = Ratio::new(1, 4);
    let cfg = |p, a, n, k| SimConfig::new(p, n, k, quarter, 1).with_adversary(a);
    vec![
        ("query-all", cfg(ProtocolId::QueryAll, AdversaryId::None, 1024, 16)),
        ("alg1", cfg(ProtocolId::Alg1, AdversaryId::Contrarian, 256, 64)),
        ("alg3-2round", cfg(ProtocolId::TwoRound, AdversaryId::IntervalFlood, 1024, 600)),
        ("alg4-logn", cfg(ProtocolId::LogN, AdversaryId::IntervalFlood, 1024, 400)),
        ("alg5-broadcast", cfg(ProtocolId::Boosted, AdversaryId::IntervalFlood, 1024, 400)),
        ("static-crash", cfg(ProtocolId::StaticCrash, AdversaryId::RandomCrash, 128, 16)),
        ("rapid-crash", cfg(ProtocolId::RapidCrash, AdversaryId::RandomCrash, 256, 16)),
        ("async-1crash", cfg(ProtocolId::AsyncOneCrash, AdversaryId::SilentCrash, 240, 16)),
        ("async-fcrash", cfg(ProtocolId::AsyncFCrash, AdversaryId::SlowDelivery, 1024, 16)),
    ]
}
