use criterion::{criterion_group, criterion_main, Criterion};
use mfrl::{GridConfig, GridWorld, KnowledgeStore, KwikParams, PriorSpread, QTable, Simulator, UpperBound, value_iterate};
use std::hint::black_box;

fn bench_value_iteration(c: &mut Criterion) {
    let world = GridWorld::new(GridConfig::default()).unwrap();
    let truth = world.true_model().unwrap();
    let kwik = KwikParams::new(0.25, 0.5).unwrap();
    let optimistic = KnowledgeStore::new(256, 5, &kwik, world.r_max()).export_model(&PriorSpread::All);
    let zeros = QTable::zeros(256, 5, 0.95);

    c.bench_function("value_iterate/true_model_cold", |b| {
        b.iter(|| value_iterate(black_box(&truth), 0.95, &zeros, &UpperBound::Unbounded, 1e-6, 10_000).unwrap())
    });
    let solved = value_iterate(&truth, 0.95, &zeros, &UpperBound::Unbounded, 1e-6, 10_000).unwrap();
    c.bench_function("value_iterate/true_model_warm", |b| {
        b.iter(|| value_iterate(black_box(&truth), 0.95, &solved, &UpperBound::Unbounded, 1e-6, 10_000).unwrap())
    });
    c.bench_function("value_iterate/optimistic_cold", |b| {
        b.iter(|| value_iterate(black_box(&optimistic), 0.95, &zeros, &UpperBound::Unbounded, 1e-6, 10_000).unwrap())
    });
    let bound = UpperBound::constant(256, 5, 1250.0);
    c.bench_function("value_iterate/true_model_bounded", |b| {
        b.iter(|| value_iterate(black_box(&truth), 0.95, &zeros, &bound, 1e-6, 10_000).unwrap())
    });
}

criterion_group!(planner, bench_value_iteration);
criterion_main!(planner);
