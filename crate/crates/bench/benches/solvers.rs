use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use rtbf_bench::{pooling_instance, user_terms};
use rtbf_core::learning::scaffold_train;
use rtbf_core::{
    optimal_data_sizes, optimal_retention_exact, optimal_retention_heuristic, seed, GameConfig, LearnProblem,
    ProblemSpec, RevocationGame, StepSchedule,
};

fn pooling(c: &mut Criterion) {
    let mut group = c.benchmark_group("pooling");
    for j in [10, 100, 1000] {
        let (a, b) = pooling_instance(j, 1);
        group.bench_with_input(BenchmarkId::from_parameter(j), &j, |bench, _| {
            bench.iter(|| optimal_data_sizes(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn equilibrium(c: &mut Criterion) {
    let mut group = c.benchmark_group("least_equilibrium");
    for n in [100, 1000, 5000] {
        let game = RevocationGame::from_terms(user_terms(n, 2), 0.5);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(&game).lower_equilibrium())
        });
    }
    group.finish();
}

fn retention(c: &mut Criterion) {
    let cfg = GameConfig::default();
    let mut group = c.benchmark_group("retention");
    group.sample_size(10);
    for n in [12, 20] {
        let terms = user_terms(n, 3);
        let revokers: Vec<usize> = (0..n).collect();
        group.bench_with_input(BenchmarkId::new("exact", n), &n, |bench, _| {
            bench.iter(|| optimal_retention_exact(black_box(&revokers), &terms, &cfg).unwrap())
        });
    }
    let terms = user_terms(5000, 4);
    let revokers: Vec<usize> = (0..5000).collect();
    group.bench_function("heuristic/5000", |bench| {
        bench.iter(|| optimal_retention_heuristic(black_box(&revokers), 16, &terms, &cfg).unwrap())
    });
    group.finish();
}

fn scaffold(c: &mut Criterion) {
    let problem = LearnProblem::generate(&ProblemSpec::default(), &mut seed::rng_for(5, &[])).unwrap();
    let schedule = StepSchedule::Constant {
        step: problem.max_step(),
    };
    let start = DVector::zeros(problem.dim());
    let mut group = c.benchmark_group("scaffold");
    group.sample_size(10);
    group.bench_function("100_rounds_10_seeds", |bench| {
        bench.iter(|| scaffold_train(black_box(&problem), &start, 100, schedule, 10, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, pooling, equilibrium, retention, scaffold);
criterion_main!(benches);
