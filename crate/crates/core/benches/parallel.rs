use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lmp_core::curves::{synthetic_losses, LossDistribution};
use lmp_core::data::{generate_dataset, SyntheticDatasetSpec};
use lmp_core::par::{solve_batch, Execution};
use lmp_core::train::{train_with, LossMode, TrainConfig};
use lmp_core::{LossVector, PoolingConfig};

fn modes() -> Vec<Execution> {
    if Execution::parallel_available() {
        vec![Execution::Sequential, Execution::Parallel]
    } else {
        vec![Execution::Sequential]
    }
}

fn batch_solve(c: &mut Criterion) {
    let crops: Vec<LossVector> = (0..64)
        .map(|seed| LossVector::new(synthetic_losses(4096, LossDistribution::Exponential, seed).unwrap()).unwrap())
        .collect();
    let config = PoolingConfig::fraction(1.3, 0.25).unwrap();
    let mut group = c.benchmark_group("solve_batch_64x4096");
    for exec in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| solve_batch(exec, black_box(&crops), &config))
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let data = generate_dataset(&SyntheticDatasetSpec::long_tail(0.5, 1)).unwrap();
    let config = TrainConfig {
        loss_mode: LossMode::Lmp,
        iterations: 10,
        batch_crops: 16,
        crop_size: (32, 32),
        ..Default::default()
    };
    let mut group = c.benchmark_group("train_lmp_10_steps");
    group.sample_size(20);
    for exec in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| train_with(black_box(&data), &config, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_solve, training);
criterion_main!(benches);
