use std::hint::black_box;

use cawave::surrogate::{forward_many, init_network, loss_and_gradient, TrainingSample};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn batch(n: usize) -> Vec<TrainingSample> {
    (0..n)
        .map(|i| {
            let x = i as f64 / n as f64;
            TrainingSample {
                p_prev: x,
                u_prev: 0.05 + 5.0 * x,
                dudt: (6.0 * x).sin(),
                dpdt: 0.1 * x,
            }
        })
        .collect()
}

fn passes(c: &mut Criterion) {
    let params = init_network(0);
    let mut g = c.benchmark_group("network");
    for n in [1usize, 64, 640] {
        let data = batch(n);
        let inputs: Vec<[f64; 3]> = data.iter().map(|s| s.inputs()).collect();
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("forward", n), &inputs, |b, x| {
            b.iter(|| black_box(forward_many(&params, x)))
        });
        g.bench_with_input(BenchmarkId::new("forward_backward", n), &data, |b, d| {
            b.iter(|| black_box(loss_and_gradient(&params, d).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, passes);
criterion_main!(benches);
