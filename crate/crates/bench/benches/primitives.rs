//! Microbenchmarks for the hot paths: factorization, Mahalanobis forms,
//! the chi-square quantile, network forward/gradient passes, neighbor
//! shape lookups, and conformal calibration.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mve_bench::{random_matrix, random_nle, random_params, random_spd, random_vector};
use mve_core::gaussian::chi2_inv_cdf;
use mve_core::linalg::SpdFactor;
use mve_core::lmve::{forward_shape, lmve_grad};
use mve_core::Ellipsoid;
use ndarray::Array1;

fn bench_factorization(c: &mut Criterion) {
    let mut group = c.benchmark_group("spd_factor");
    for n in [2usize, 8, 32] {
        let m = random_spd(n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| {
            b.iter(|| SpdFactor::new(black_box(m.view())).unwrap())
        });
    }
    group.finish();
}

fn bench_mahalanobis(c: &mut Criterion) {
    let mut group = c.benchmark_group("mahalanobis");
    for n in [2usize, 8, 32] {
        let e = Ellipsoid::new(Array1::zeros(n), random_spd(n, 2)).unwrap();
        let y = random_vector(n, 3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &e, |b, e| {
            b.iter(|| e.mahalanobis(black_box(y.view())).unwrap())
        });
    }
    group.finish();
}

fn bench_chi2_quantile(c: &mut Criterion) {
    c.bench_function("chi2_inv_cdf_p90_n2", |b| {
        b.iter(|| chi2_inv_cdf(black_box(0.9), black_box(2)).unwrap())
    });
}

fn bench_network(c: &mut Criterion) {
    let mut group = c.benchmark_group("network");
    for d in [3usize, 8, 64] {
        let params = random_params(d, 2, 7);
        let x = random_vector(d, 11);
        group.bench_with_input(BenchmarkId::new("forward", d), &params, |b, p| {
            b.iter(|| forward_shape(p, black_box(x.view()), 1e-4, None).unwrap())
        });
        let xb = random_matrix(128, d, 13);
        let rb = random_matrix(128, 2, 17);
        group.bench_with_input(BenchmarkId::new("grad_batch128", d), &params, |b, p| {
            b.iter(|| lmve_grad(p, black_box(xb.view()), rb.view(), 0.5, 1e-4, None).unwrap())
        });
    }
    group.finish();
}

fn bench_nle_lookup(c: &mut Criterion) {
    let mut group = c.benchmark_group("nle_shape_at");
    for m in [500usize, 4000] {
        let model = random_nle(m, 8, 2, 23);
        let x = random_vector(8, 29);
        group.bench_with_input(BenchmarkId::from_parameter(m), &model, |b, model| {
            b.iter(|| model.shape_at(black_box(x.view())).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_factorization,
    bench_mahalanobis,
    bench_chi2_quantile,
    bench_network,
    bench_nle_lookup
);
criterion_main!(benches);
