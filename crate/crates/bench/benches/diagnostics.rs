use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gsvgd::harness::builtin_model;
use gsvgd::kernel::{coordinate_kernels, median_bandwidth_columns, DEFAULT_BANDWIDTH_FLOOR};
use gsvgd::{ksd_squared, mmd_squared, stream, BandwidthRule, KernelSpec, KsdKind, ParticleSet, Stream};

fn bench_ksd(c: &mut Criterion) {
    let model = builtin_model("gaussian-grid", 0).unwrap();
    let mut group = c.benchmark_group("ksd_u_local");
    group.sample_size(20);
    for n in [50usize, 200] {
        let mut rng = stream(3, Stream::Init);
        let p = ParticleSet::standard_normal(n, model.dim(), &mut rng);
        let ks = coordinate_kernels(&KernelSpec::local(), &model, &p, &mut rng).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| {
            b.iter(|| ksd_squared(black_box(p), &model, &ks, KsdKind::U).unwrap())
        });
    }
    group.finish();
}

fn bench_median(c: &mut Criterion) {
    let mut group = c.benchmark_group("median_bandwidth");
    for n in [50usize, 500] {
        let p = ParticleSet::standard_normal(n, 100, &mut stream(4, Stream::Init));
        let cols: Vec<usize> = (0..100).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| {
            b.iter(|| median_bandwidth_columns(black_box(p), &cols, DEFAULT_BANDWIDTH_FLOOR))
        });
    }
    group.finish();
}

fn bench_mmd(c: &mut Criterion) {
    let mut rng = stream(5, Stream::Init);
    let a = ParticleSet::standard_normal(50, 100, &mut rng);
    let b = ParticleSet::standard_normal(2000, 100, &mut rng);
    let mut group = c.benchmark_group("mmd");
    group.sample_size(10);
    group.bench_function("n50_vs_2000_d100", |bch| {
        bch.iter(|| mmd_squared(black_box(&a), &b, BandwidthRule::MedianTrick).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_ksd, bench_median, bench_mmd);
criterion_main!(benches);
