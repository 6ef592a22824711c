use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use regpi_bench::fixture;
use regpi_core::bellman::{jacobian, residual_f};
use regpi_core::linalg::lu_solve;
use regpi_core::solvers::{newton_step, pev_closed_form, run, solve_reference};
use regpi_core::SolverConfig;

const SIZES: [usize; 3] = [5, 10, 20];

fn bellman(c: &mut Criterion) {
    let mut group = c.benchmark_group("bellman");
    for n in SIZES {
        let (inst, reg, q) = fixture(n, n, 0.8, 1);
        group.bench_with_input(BenchmarkId::new("residual", n), &n, |b, _| {
            b.iter(|| residual_f(black_box(&q), &inst, &reg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("jacobian", n), &n, |b, _| {
            b.iter(|| jacobian(black_box(&q), &inst, &reg).unwrap())
        });
    }
    group.finish();
}

fn linear_algebra(c: &mut Criterion) {
    let mut group = c.benchmark_group("lu_solve");
    for n in SIZES {
        let (inst, reg, q) = fixture(n, n, 0.8, 2);
        let j = jacobian(&q, &inst, &reg).unwrap();
        let rhs = residual_f(&q, &inst, &reg).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n * n), &n, |b, _| {
            b.iter(|| lu_solve(black_box(&j), &rhs).unwrap())
        });
    }
    group.finish();
}

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    for n in SIZES {
        let (inst, reg, q) = fixture(n, n, 0.8, 3);
        group.bench_with_input(BenchmarkId::new("newton", n), &n, |b, _| {
            b.iter(|| newton_step(black_box(&q), &inst, &reg).unwrap())
        });
        for m in [5usize, 50] {
            group.bench_with_input(BenchmarkId::new(format!("pev_M{m}"), n), &n, |b, _| {
                b.iter(|| pev_closed_form(black_box(&q), m, &inst, &reg).unwrap())
            });
        }
    }
    group.finish();
}

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    let (inst, reg, q0) = fixture(5, 5, 0.8, 42);
    group.bench_function("reference", |b| {
        b.iter(|| solve_reference(black_box(&inst), &reg).unwrap())
    });
    let configs = [
        ("pi", SolverConfig::policy_iteration()),
        ("mpi_M50", SolverConfig::modified_policy_iteration(50)),
        ("mpi_M5", SolverConfig::modified_policy_iteration(5)),
        ("vi", SolverConfig::value_iteration()),
    ];
    for (name, cfg) in configs {
        let cfg = cfg.with_record_trace(false);
        group.bench_function(name, |b| {
            b.iter(|| run(&inst, &reg, &cfg, black_box(&q0), None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bellman, linear_algebra, steps, solvers);
criterion_main!(benches);
