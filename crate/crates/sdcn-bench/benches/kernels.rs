use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sdcn_core::layers::{
    conv2d_backward, conv2d_forward, linear_forward, maxpool2x2_forward, softmax, Padding,
};
use sdcn_core::Tensor;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = random_tensor(&mut rng, &[16, 16, 16]);
    let kernels = random_tensor(&mut rng, &[16, 16, 3, 3]);
    let bias = random_tensor(&mut rng, &[16]);

    c.bench_function("conv2d_forward_same_16x16x16", |b| {
        b.iter(|| {
            conv2d_forward(
                black_box(&input),
                black_box(&kernels),
                black_box(&bias),
                Padding::Same,
            )
            .unwrap()
        })
    });

    let d_out = random_tensor(&mut rng, &[16, 16, 16]);
    c.bench_function("conv2d_backward_same_16x16x16", |b| {
        b.iter(|| {
            conv2d_backward(
                black_box(&input),
                black_box(&kernels),
                black_box(&bias),
                Padding::Same,
                black_box(&d_out),
            )
            .unwrap()
        })
    });
}

fn bench_small_ops(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let feat = random_tensor(&mut rng, &[16, 14, 14]);
    c.bench_function("maxpool2x2_16x14x14", |b| {
        b.iter(|| maxpool2x2_forward(black_box(&feat)).unwrap())
    });

    let x = random_tensor(&mut rng, &[256]);
    let w = random_tensor(&mut rng, &[512, 256]);
    let bias = random_tensor(&mut rng, &[512]);
    c.bench_function("linear_256_to_512", |b| {
        b.iter(|| linear_forward(black_box(&x), black_box(&w), black_box(&bias)).unwrap())
    });

    let logits = random_tensor(&mut rng, &[64]);
    c.bench_function("softmax_64", |b| b.iter(|| softmax(black_box(&logits))));
}

criterion_group!(benches, bench_conv, bench_small_ops);
criterion_main!(benches);
