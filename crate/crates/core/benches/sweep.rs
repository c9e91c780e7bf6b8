use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use commgpu::config::ScenarioConfig;
use commgpu::experiment::{expand, run_batch, run_batch_sequential, SweepAxis, SweepSpec};
use commgpu::scheduling::SchedulerKind;

fn grid() -> SweepSpec {
    SweepSpec {
        base: ScenarioConfig::preset("small").unwrap(),
        schedulers: SchedulerKind::BASELINES.to_vec(),
        axis: SweepAxis::new("churn.dropout_multiplier", [1, 4, 16]),
        seeds: vec![1, 2],
    }
}

fn sweep(c: &mut Criterion) {
    let points = expand(&grid()).unwrap();
    let mut group = c.benchmark_group("sweep_18_members");
    group.sample_size(20);
    group.bench_function("sequential", |b| {
        b.iter(|| run_batch_sequential(black_box(&points)).unwrap())
    });
    group.bench_function("parallel", |b| b.iter(|| run_batch(black_box(&points)).unwrap()));
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
