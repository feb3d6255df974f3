use dr_core::model::{AdversaryId, ProtocolId, Ratio, SimConfig};
use dr_core::runner::run;

fn cell(p: ProtocolId, a: AdversaryId, n: usize, k: usize, beta: Ratio, seeds: u64) {
    for seed in 0..seeds {
        let cfg = SimConfig::new(p, n, k, beta, seed).with_adversary(a);
        let r = run(&cfg).unwrap_or_else(|e| panic!("{p} {a} seed {seed}: {e}"));
        assert!(r.metrics.correct, "{p} {a} seed {seed} wrong output");
    }
}

#[test]
fn every_protocol_downloads_under_its_adversaries() {
    let half = Ratio::new(1, 2);
    let quarter = Ratio::new(1, 4);
    cell(ProtocolId::QueryAll, AdversaryId::None, 64, 8, quarter, 2);
    cell(ProtocolId::Alg1, AdversaryId::Contrarian, 256, 128, quarter, 3);
    cell(ProtocolId::TwoRound, AdversaryId::IntervalFlood, 512, 600, quarter, 3);
    cell(ProtocolId::LogN, AdversaryId::IntervalFlood, 512, 600, quarter, 3);
    cell(ProtocolId::LogN, AdversaryId::DynamicFlood, 512, 600, quarter, 3);
    cell(ProtocolId::Boosted, AdversaryId::IntervalFlood, 512, 600, quarter, 3);
    for a in [AdversaryId::None, AdversaryId::SilentCrash, AdversaryId::RandomCrash] {
        cell(ProtocolId::StaticCrash, a, 64, 8, half, 5);
        cell(ProtocolId::RapidCrash, a, 64, 8, half, 5);
        cell(ProtocolId::AsyncOneCrash, a, 24, 4, quarter, 5);
        cell(ProtocolId::AsyncFCrash, a, 256, 8, half, 5);
    }
    cell(ProtocolId::AsyncFCrash, AdversaryId::SlowDelivery, 256, 8, half, 5);
}
