use std::hint::black_box;

use agency_bench::game;
use agency_core::assumptions::check_conflict;
use agency_core::{check_efficiency, solve_truthful, truthful_profile, Allocation, AuditConfig, SolveConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn truthful_profiles(c: &mut Criterion) {
    let mut group = c.benchmark_group("truthful_profile");
    let market = game("market", &[], 201);
    group.bench_function("market_201", |b| b.iter(|| truthful_profile(&market, black_box(&[2.0, 2.0])).unwrap()));
    let ex1 = game("ex1", &[("gamma", 0.5)], 201);
    group.bench_function("ex1_fixed_point_201", |b| {
        b.iter(|| truthful_profile(&ex1, black_box(&[0.5, 0.5])).unwrap())
    });
    group.finish();
}

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    let prop = game("prop3b_ex1", &[], 101);
    group.bench_function("prop3b_ex1_101", |b| b.iter(|| solve_truthful(&prop, &SolveConfig::default()).unwrap()));
    let market = game("market", &[], 101);
    group.bench_function("market_101", |b| b.iter(|| solve_truthful(&market, &SolveConfig::default()).unwrap()));
    group.finish();
}

fn audits(c: &mut Criterion) {
    let mut group = c.benchmark_group("audit");
    group.sample_size(10);
    let market = game("market", &[], 201);
    let cfg = AuditConfig {
        samples: 2_000,
        ..AuditConfig::default()
    };
    group.bench_function("conflict_market", |b| b.iter(|| check_conflict(&market, black_box(&cfg)).unwrap()));
    let ex1 = game("ex1", &[("gamma", 2.0)], 51);
    let alloc = Allocation::new(&ex1, vec![1.0], vec![0.0, 0.0]).unwrap();
    group.bench_function("efficiency_ex1_41", |b| b.iter(|| check_efficiency(&ex1, black_box(&alloc), 41).unwrap()));
    group.finish();
}

criterion_group!(benches, truthful_profiles, solve, audits);
criterion_main!(benches);
