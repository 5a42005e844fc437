use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use jsq_core::model::{make_arrival_dist, make_service_dist, Load, Policy, Simulator};
use jsq_core::rng::replication_rng;
use jsq_core::stats::wasserstein1_to_exp;

fn slots(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    const SLOTS: u64 = 10_000;
    group.throughput(Throughput::Elements(SLOTS));
    for n in [4usize, 16, 64] {
        for policy in [Policy::Jsq, Policy::JsqD(2), Policy::Random] {
            let arr = make_arrival_dist(n, &Load::Alpha(2.5), 0.5).unwrap();
            let svc = make_service_dist(0.5).unwrap();
            group.bench_with_input(BenchmarkId::new(policy.to_string(), n), &n, |b, &n| {
                let mut sim = Simulator::new(n, arr.clone(), svc.clone(), policy).unwrap();
                let mut rng = replication_rng(1, 0);
                b.iter(|| {
                    for _ in 0..SLOTS {
                        black_box(sim.step(&mut rng).a_total);
                    }
                })
            });
        }
    }
    group.finish();
}

fn wasserstein(c: &mut Criterion) {
    let samples: Vec<f64> = (1..=100_000).map(|k| -(1.0 - (k as f64 - 0.5) / 100_000.0).ln()).rev().collect();
    c.bench_function("w1_to_exp_100k", |b| b.iter(|| wasserstein1_to_exp(black_box(&samples), 1.0).unwrap()));
}

criterion_group!(benches, slots, wasserstein);
criterion_main!(benches);
