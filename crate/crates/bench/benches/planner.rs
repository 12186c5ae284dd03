use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tenrel_bench::{fixtures, random_dag};
use tenrel_core::{optimize_greedy, optimize_program, CostModel, CostParams, SearchOptions};

fn planners(c: &mut Criterion) {
    let model = CostModel::new(CostParams::default());
    let opts = SearchOptions::default();
    let mut workloads = fixtures(0);
    workloads.extend([8, 16, 32].map(|n| random_dag(n, 16, 0.05, n as u64)));
    let mut group = c.benchmark_group("plan");
    for w in &workloads {
        group.bench_with_input(BenchmarkId::new("dp", &w.name), w, |b, w| {
            b.iter(|| optimize_program(black_box(&w.program), &w.stats, &model, opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("greedy", &w.name), w, |b, w| {
            b.iter(|| optimize_greedy(black_box(&w.program), &w.stats, &model, opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, planners);
criterion_main!(benches);
