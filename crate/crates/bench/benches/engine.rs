use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hsfs_bench::{batch, cnn, mlp};
use hsfs_core::nn::{self, Mode};
use hsfs_core::pruner;
use std::hint::black_box;

fn dense(c: &mut Criterion) {
    let net = mlp(512);
    let x = batch(vec![128, 512]);
    let labels: Vec<usize> = (0..128).map(|i| i % 3).collect();
    c.bench_function("mlp_forward_b128", |b| {
        b.iter(|| net.predict(black_box(&x)).unwrap())
    });
    c.bench_function("mlp_forward_backward_b128", |b| {
        b.iter(|| {
            let acts = net.forward(&x, Mode::Train { seed: 1 }).unwrap();
            let (_, grad) = nn::cross_entropy(acts.output(), &labels).unwrap();
            net.backward(&acts, &grad).unwrap()
        })
    });
    c.bench_function("worthiness_512", |b| {
        b.iter(|| pruner::worthiness(black_box(&net)).unwrap())
    });
    c.bench_function("drop_input_512", |b| {
        b.iter_batched(
            || net.clone(),
            |n| n.drop_input(black_box(100)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn conv(c: &mut Criterion) {
    let net = cnn();
    let x = batch(vec![16, 16, 16, 16]);
    let target = batch(vec![16, 16, 16, 1]);
    c.bench_function("cnn_forward_b16", |b| {
        b.iter(|| net.predict(black_box(&x)).unwrap())
    });
    c.bench_function("cnn_forward_backward_b16", |b| {
        b.iter(|| {
            let acts = net.forward(&x, Mode::Train { seed: 1 }).unwrap();
            let (_, grad) = nn::mse(acts.output(), &target).unwrap();
            net.backward(&acts, &grad).unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = dense, conv
}
criterion_main!(benches);
