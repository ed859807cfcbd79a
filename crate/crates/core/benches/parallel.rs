//! Sequential against rayon-parallel execution of the data-parallel loops.
//! Build with `--no-default-features` to see both arms run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dlab_core::data::{generate, Factor, FactorKind, FactorSpec};
use dlab_core::exec::Execution;
use dlab_core::metrics::recon_bce;
use dlab_core::model::{ModelConfig, VaeModel, Variant};
use dlab_core::verify::{elliptical_battery, stein_battery, Family};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn batteries(c: &mut Criterion) {
    let mut g = c.benchmark_group("verify_battery");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("stein", name), &exec, |b, &exec| {
            b.iter(|| black_box(stein_battery(1, 16, 20_000, exec).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("laplace", name), &exec, |b, &exec| {
            b.iter(|| black_box(elliptical_battery(Family::Laplace, 1, 16, 20_000, exec).unwrap()))
        });
    }
    g.finish();
}

fn rasterize(c: &mut Criterion) {
    let spec = FactorSpec::new(vec![
        Factor::new("x", FactorKind::XPosition, 8.0, 23.0, 16),
        Factor::new("y", FactorKind::YPosition, 8.0, 23.0, 16),
        Factor::new("rotation", FactorKind::Rotation, 0.0, 75.0, 6),
    ])
    .unwrap();
    let mut g = c.benchmark_group("generate_32x32");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| black_box(generate(&spec, 32, 32, exec).unwrap())));
    }
    g.finish();
}

fn reconstruction(c: &mut Criterion) {
    let x = generate(&FactorSpec::standard(), 16, 16, Execution::Parallel).unwrap().images().clone();
    let cfg = ModelConfig {
        input_dim: 256,
        latent_dim: 4,
        hidden: 256,
        variant: Variant::Canonical,
    };
    let model = VaeModel::new(cfg, 0).unwrap();
    let mut g = c.benchmark_group("recon_bce");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| black_box(recon_bce(&model, &x, exec).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, batteries, rasterize, reconstruction);
criterion_main!(benches);
