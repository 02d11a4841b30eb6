//! Compares the rayon-backed helpers on the default pool against the same
//! work pinned to a single worker thread.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gpr_odom::datagen::{generate_pairs, PairConfig};
use gpr_odom::odomnet::{NetConfig, OdomNet};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("sequential", single), ("parallel", default)]
}

fn bench_generate(c: &mut Criterion) {
    let cfg = PairConfig::default();
    let mut group = c.benchmark_group("generate_pairs_32");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| generate_pairs(&cfg, 32, 7, "bench").unwrap()))
        });
    }
    group.finish();
}

fn bench_predict(c: &mut Criterion) {
    let pairs = generate_pairs(&PairConfig::default(), 16, 3, "bench").unwrap();
    let refs: Vec<_> = pairs.iter().map(|p| (&p.prev, &p.cur)).collect();
    let net = OdomNet::new(NetConfig::default(), 1).unwrap();
    let mut group = c.benchmark_group("predict_16");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| net.predict(&refs, 16).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_generate, bench_predict);
criterion_main!(benches);
