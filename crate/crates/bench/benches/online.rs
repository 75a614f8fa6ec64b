use criterion::{criterion_group, criterion_main, Criterion};
use lti_twin::pipeline::run_online;
use lti_twin_bench::Fixture;
use std::hint::black_box;

fn online(c: &mut Criterion) {
    let f = Fixture::desk();
    let mut group = c.benchmark_group("desk_online");
    group.bench_function("infer_map", |b| {
        b.iter(|| f.art.infer_map(black_box(&f.d_obs)).unwrap())
    });
    group.bench_function("predict_qoi", |b| {
        b.iter(|| f.art.predict_qoi(black_box(&f.d_obs)).unwrap())
    });
    group.bench_function("infer_predict_intervals", |b| {
        b.iter(|| run_online(&f.art, black_box(&f.d_obs), 0.95).unwrap())
    });
    group.bench_function("posterior_cov_matvec", |b| {
        b.iter(|| f.art.posterior_cov_matvec(black_box(&f.m)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, online);
criterion_main!(benches);
