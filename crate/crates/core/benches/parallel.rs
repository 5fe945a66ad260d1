//! Sequential against parallel execution: nearest-neighbour correspondence
//! on large clouds and a small robustness run over whole scenes.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use articulate::harness::{run_experiment_with, Category, ExperimentConfig, ExperimentKind};
use articulate::par::Exec;
use articulate::perception::real_correspondence;

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect()
}

fn correspondence(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 20_000;
    let p = cloud(&mut rng, n);
    let flow = cloud(&mut rng, n).into_iter().map(|d| d.map(|x| 0.05 * x)).collect::<Vec<_>>();
    let next = cloud(&mut rng, n);
    let mut g = c.benchmark_group("correspondence");
    for exec in [Exec::Sequential, Exec::Parallel] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| real_correspondence(black_box(&p), &flow, &next, exec).unwrap())
        });
    }
    g.finish();
}

fn robustness(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.categories = vec![Category::Door, Category::Microwave];
    cfg.dataset.per_category = 2;
    cfg.robustness.per_category = 2;
    cfg.robustness.modes = vec!["gt".into()];
    let mut g = c.benchmark_group("robustness");
    g.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| run_experiment_with(ExperimentKind::Robustness, black_box(&cfg), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, correspondence, robustness);
criterion_main!(benches);
