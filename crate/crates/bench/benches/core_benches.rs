use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use bentrank_bench::reference_dataset;
use bentrank_core::nalgebra::DMatrix;
use bentrank_core::{bent, cusum, fit_rank_linear, ls, FitConfig, ScoreFunction, TestConfig};

fn bench_rank_linear_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_rank_linear");
    for n in [100usize, 200, 400] {
        let ds = reference_dataset(n, 7);
        let design = DMatrix::from_fn(n, 2, |i, j| {
            if j == 0 {
                ds.z()[i]
            } else {
                (ds.z()[i] - 0.5f64).max(0.0)
            }
        });
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                black_box(
                    fit_rank_linear(ds.y(), &design, ScoreFunction::Wilcoxon).unwrap(),
                )
            })
        });
    }
    group.finish();
}

fn bench_bent_line_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_bent_line");
    group.sample_size(10);
    let ds = reference_dataset(200, 11);
    group.bench_function("rank_n200", |b| {
        b.iter(|| black_box(bent::fit_bent_line(&ds, &FitConfig::default()).unwrap()))
    });
    group.bench_function("ls_n200", |b| {
        b.iter(|| black_box(ls::fit_ls_bent_line(&ds, &FitConfig::default()).unwrap()))
    });
    group.finish();
}

fn bench_change_point_test(c: &mut Criterion) {
    let mut group = c.benchmark_group("change_point_test");
    group.sample_size(10);
    let ds = reference_dataset(200, 13);
    let config = TestConfig {
        nb: 500,
        seed: 1,
        ..TestConfig::default()
    };
    group.bench_function("wild_bootstrap_nb500", |b| {
        b.iter(|| black_box(cusum::change_point_test(&ds, &config).unwrap()))
    });
    group.bench_function("ls_bootstrap_nb500", |b| {
        b.iter(|| black_box(ls::ls_cusum_test(&ds, &config).unwrap()))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_rank_linear_fit,
    bench_bent_line_fit,
    bench_change_point_test
);
criterion_main!(benches);
