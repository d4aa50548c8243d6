use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use htlstm_bench::{figure3_layer, input_batch};
use htlstm_core::lstm::{sequence_backward, sequence_forward_batch};
use htlstm_core::{DenseTensor, LstmConfig, LstmParams};
use std::hint::black_box;

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("ht_forward");
    for rank in [2, 4, 8, 16] {
        let layer = figure3_layer(rank);
        let x = input_batch(16, layer.in_dim());
        layer.forward_batch(&x).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(rank), &rank, |b, _| {
            b.iter(|| layer.forward_batch(black_box(&x)).unwrap())
        });
    }
    let layer = figure3_layer(4);
    let w = layer.as_matrix().unwrap();
    let x = input_batch(1, layer.in_dim());
    g.bench_function("dense_matvec", |b| {
        b.iter(|| {
            let (m, n) = (w.shape()[0], w.shape()[1]);
            let y: Vec<f64> = (0..m)
                .map(|i| w.data()[i * n..(i + 1) * n].iter().zip(x.data()).map(|(a, b)| a * b).sum())
                .collect();
            black_box(y)
        })
    });
    g.finish();
}

fn backward(c: &mut Criterion) {
    let mut g = c.benchmark_group("ht_backward");
    for rank in [2, 4, 8] {
        let layer = figure3_layer(rank);
        let x = input_batch(16, layer.in_dim());
        let dy = input_batch(16, layer.out_dim());
        g.bench_with_input(BenchmarkId::from_parameter(rank), &rank, |b, _| {
            b.iter(|| layer.backward_batch(black_box(&x), black_box(&dy)).unwrap())
        });
    }
    g.finish();
}

fn lstm_step(c: &mut Criterion) {
    let p = LstmParams::new(&LstmConfig::default()).unwrap();
    let xs: Vec<DenseTensor> = (0..6).map(|_| input_batch(16, p.input_dim())).collect();
    let dz = input_batch(16, p.classes());
    c.bench_function("lstm_minibatch_forward_backward", |b| {
        b.iter(|| {
            let (_, cache) = sequence_forward_batch(&p, black_box(&xs), 0.25, 1, true).unwrap();
            sequence_backward(&p, &cache, &dz).unwrap()
        })
    });
}

criterion_group!(benches, forward, backward, lstm_step);
criterion_main!(benches);
