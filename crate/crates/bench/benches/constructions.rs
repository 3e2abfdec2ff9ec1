use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use relukit::gates::{product2_gate, productl_gate, square_gate, GateConfig};
use relukit::net::Scratch;
use relukit::smooth::{smooth_net, target_by_name};

fn bench_gate_construction(c: &mut Criterion) {
    let mut group = c.benchmark_group("construct");
    for &eps in &[1e-2, 1e-4] {
        group.bench_with_input(BenchmarkId::new("square_gate", eps), &eps, |b, &eps| {
            let cfg = GateConfig::new(0.5, 3, eps, 2).unwrap();
            b.iter(|| square_gate(black_box(&cfg)).unwrap());
        });
        group.bench_with_input(BenchmarkId::new("product2_gate", eps), &eps, |b, &eps| {
            let cfg = GateConfig::new(0.5, 3, eps, 2).unwrap();
            b.iter(|| product2_gate(black_box(&cfg)).unwrap());
        });
    }
    group.bench_function("smooth_net_d2_r2_eps0.2", |b| {
        let f = target_by_name("exp_neg_norm2", 2, 2.0).unwrap();
        let cfg = GateConfig::new(0.5, 3, 0.2, 2).unwrap();
        b.iter(|| smooth_net(black_box(&f), 0.2, &cfg).unwrap());
    });
    group.finish();
}

fn bench_gate_eval(c: &mut Criterion) {
    let mut group = c.benchmark_group("eval");
    let cfg = GateConfig::new(0.5, 3, 1e-3, 3).unwrap();
    let gate = productl_gate(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points: Vec<[f64; 3]> = (0..1024)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    group.bench_function("productl_gate_1k_points", |b| {
        let mut scratch = Scratch::default();
        b.iter(|| {
            let mut acc = 0.0;
            for p in &points {
                acc += gate.eval_scratch(black_box(p), &mut scratch).unwrap()[0];
            }
            acc
        });
    });
    group.finish();
}

criterion_group!(benches, bench_gate_construction, bench_gate_eval);
criterion_main!(benches);
