use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use modgp::pipeline::build_model;
use modgp::{ModelConfig, ModelKind};
use modgp_bench::{run_steps, sine_data};
use std::time::Duration;

const BATCH: usize = 512;
const STEPS: usize = 5;

/// Inducing inputs come from the first rows only, to keep setup quick.
fn head(data: &modgp::Dataset, k: usize) -> modgp::Tensor {
    data.x.select_rows(&(0..k.min(data.len())).collect::<Vec<_>>())
}

// Cost per step should not depend on the data size.
fn svgp_vs_n(c: &mut Criterion) {
    let mut group = c.benchmark_group("svgp_steps_vs_n");
    group.sample_size(10).measurement_time(Duration::from_secs(5));
    for n in [1_000, 10_000, 100_000] {
        let data = sine_data(n, 1, 0);
        let cfg = ModelConfig::new(ModelKind::Svgp);
        let model = build_model(&cfg, &head(&data, 2_000), 0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| run_steps(black_box(&model), &data, BATCH, STEPS).unwrap())
        });
    }
    group.finish();
}

// Cost per step should grow linearly with the number of experts.
fn smgp_vs_experts(c: &mut Criterion) {
    let mut group = c.benchmark_group("smgp_steps_vs_experts");
    group.sample_size(10).measurement_time(Duration::from_secs(8));
    let data = sine_data(10_000, 1, 1);
    for t in [2, 4, 8] {
        let cfg = ModelConfig { experts: t, ..ModelConfig::new(ModelKind::Smgp) };
        let model = build_model(&cfg, &head(&data, 2_000), 0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, _| {
            b.iter(|| run_steps(black_box(&model), &data, BATCH, STEPS).unwrap())
        });
    }
    group.finish();
}

fn every_model(c: &mut Criterion) {
    let mut group = c.benchmark_group("step_by_model");
    group.sample_size(10).measurement_time(Duration::from_secs(5));
    let data = sine_data(5_000, 2, 2);
    for kind in ModelKind::ALL {
        let cfg = ModelConfig { hidden: vec![50, 50], ..ModelConfig::new(kind) };
        let model = build_model(&cfg, &data.x, 0).unwrap();
        group.bench_function(kind.as_str(), |b| b.iter(|| run_steps(black_box(&model), &data, BATCH, 1).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, svgp_vs_n, smgp_vs_experts, every_model);
criterion_main!(benches);
