use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tenrel_bench::sparse_matmul;
use tenrel_core::executor::dense_eval;
use tenrel_core::{emit_program, exec_plan, optimize_program, run_script, CostModel, CostParams, OpCounter, SearchOptions};

fn matmul(c: &mut Criterion) {
    let model = CostModel::new(CostParams::default());
    let mut group = c.benchmark_group("matmul");
    group.sample_size(20);
    for density in [0.01, 0.1, 0.5] {
        let w = sparse_matmul(64, density, 7);
        let plan = optimize_program(&w.program, &w.stats, &model, SearchOptions::default()).unwrap();
        let compiled = emit_program(&w.program, &plan).unwrap();
        group.bench_with_input(BenchmarkId::new("relational", density), &w, |b, w| {
            b.iter(|| exec_plan(black_box(&w.program), &plan, &w.inputs, &mut OpCounter::default()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sql", density), &w, |b, w| {
            b.iter(|| run_script(black_box(&compiled.script), &compiled.manifest, &w.inputs).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dense", density), &w, |b, w| {
            b.iter(|| dense_eval(black_box(&w.program), &w.inputs, &mut OpCounter::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, matmul);
criterion_main!(benches);
