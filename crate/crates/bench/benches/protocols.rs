use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dr_bench::fixtures;
use dr_core::runner::run;
use dr_core::sifting::build_decision_tree;
use dr_core::BitString;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn protocols(c: &mut Criterion) {
    let mut g = c.benchmark_group("run");
    g.sample_size(10);
    for (name, cfg) in fixtures() {
        run(&cfg).expect("fixture runs");
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| run(black_box(cfg)).unwrap())
        });
    }
    g.finish();
}

fn decision_tree(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let strings: Vec<BitString> = (0..64)
        .map(|_| {
            let text: String = (0..256).map(|_| if rng.gen() { '1' } else { '0' }).collect();
            BitString::parse(&text).unwrap()
        })
        .collect();
    c.bench_function("decision_tree/64x256", |b| b.iter(|| build_decision_tree(black_box(&strings)).unwrap()));
}

criterion_group!(benches, protocols, decision_tree);
criterion_main!(benches);
