use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use qosnet_core::allocator::{greedy_min_total_with, FrozenPowerModel, TablePowerModel};
use qosnet_core::channel::stream;
use qosnet_core::neural::{Init, MlpModel};
use qosnet_core::{Fading, Scenario, SystemConfig, UserSpec};

fn scenario() -> Scenario {
    let users = vec![
        UserSpec::tolerant(3e-11, 6e5),
        UserSpec::tolerant(8e-12, 4e5),
        UserSpec::sensitive(2e-11, 400.0, 1e-4, 0.05, 1e-2),
        UserSpec::sensitive(5e-12, 200.0, 2e-4, 0.05, 1e-2),
        UserSpec::urllc(1e-11, 256.0, 5e-8),
        UserSpec::urllc(4e-12, 400.0, 5e-8),
    ];
    Scenario::new(users, SystemConfig { max_subcarriers: 32, ..SystemConfig::default() }).unwrap()
}

fn greedy(c: &mut Criterion) {
    let scn = scenario();
    // Curves tabulated once, so the benchmark measures the allocator alone.
    let mut frozen = FrozenPowerModel::sample(&scn, Fading::Rayleigh, 64, &mut stream(1)).unwrap();
    greedy_min_total_with(&mut frozen, &scn.cfg).unwrap();
    let curves: Vec<Vec<f64>> = (0..6)
        .map(|k| (1..=32).map(|n| frozen.cache().get(&(k, n)).copied().unwrap_or(f64::INFINITY)).collect())
        .collect();
    c.bench_function("greedy_total_k6_n32", |b| {
        b.iter(|| {
            let mut m = TablePowerModel { curves: curves.clone() };
            black_box(greedy_min_total_with(&mut m, &scn.cfg).unwrap())
        })
    });
    c.bench_function("frozen_curves_k6_n32", |b| {
        b.iter(|| {
            let mut m = FrozenPowerModel::sample(&scn, Fading::Rayleigh, 64, &mut stream(2)).unwrap();
            black_box(greedy_min_total_with(&mut m, &scn.cfg).unwrap())
        })
    });
}

fn forward(c: &mut Criterion) {
    let net = MlpModel::new(&[12, 64, 64, 6], Init::He, &mut stream(3)).unwrap();
    let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
    c.bench_function("forward_12_64_64_6", |b| b.iter(|| black_box(net.forward(black_box(&x)).unwrap())));
}

criterion_group!(benches, greedy, forward);
criterion_main!(benches);
