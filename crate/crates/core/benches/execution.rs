//! Sequential versus parallel execution of the hot paths.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ksalsa::clustering::distance_matrix;
use ksalsa::config::RunConfig;
use ksalsa::exec::Execution;
use ksalsa::latent::LatentCode;
use ksalsa::numerics::Rng;
use ksalsa::pipeline::{run_release, ReleaseOptions};
use ksalsa::toydata::{generate, ToyDataOptions};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_distance_matrix(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let codes: Vec<LatentCode> = (0..400).map(|_| LatentCode::random(8, 64, &mut rng)).collect();
    let mut group = c.benchmark_group("distance_matrix");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| distance_matrix(black_box(&codes), exec).unwrap())
        });
    }
    group.finish();
}

fn bench_release(c: &mut Criterion) {
    let dataset = generate(&ToyDataOptions {
        records: 20,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let cfg = RunConfig {
        k: 5,
        iterations: 20,
        ..Default::default()
    };
    let mut group = c.benchmark_group("release_k5");
    group.sample_size(10);
    for (name, exec) in MODES {
        let options = ReleaseOptions {
            exec,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &options, |b, options| {
            b.iter(|| run_release(black_box(&dataset), &cfg, options).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_distance_matrix, bench_release);
criterion_main!(benches);
