use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dualseg_bench::ramp;
use dualseg_core::nn::{ops, Tensor, UNetConfig, UNetModel};
use dualseg_core::training::{hybrid_loss, LossConfig};
use std::hint::black_box;

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for &ch in &[8usize, 16, 32] {
        let x = ramp(&[8, ch, 64, 64]);
        let w = ramp(&[ch, ch, 3, 3]);
        let b = Tensor::zeros(&[ch]);
        group.bench_with_input(BenchmarkId::new("forward", ch), &ch, |bench, _| {
            bench.iter(|| ops::conv2d_forward(black_box(&x), &w, &b).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("backward", ch), &ch, |bench, _| {
            bench.iter(|| ops::conv2d_backward(black_box(&x), &w, &x).unwrap())
        });
    }
    group.finish();
}

fn unet(c: &mut Criterion) {
    let mut model = UNetModel::<f32>::with_seed(UNetConfig::desk(), 1).unwrap();
    let x = ramp(&[8, 2, 64, 64]);
    let g = Tensor::filled(&[8, 1, 64, 64], 1e-3f32);
    c.bench_function("unet_desk_infer_b8", |b| b.iter(|| model.infer(black_box(&x)).unwrap()));
    c.bench_function("unet_desk_train_step_b8", |b| {
        b.iter(|| {
            model.forward(black_box(&x)).unwrap();
            model.backward(&g).unwrap()
        })
    });
}

fn loss(c: &mut Criterion) {
    let n = 8 * 64 * 64;
    let pred: Vec<f32> = (0..n).map(|i| ((i % 89) as f32 + 0.5) / 90.0).collect();
    let gt: Vec<f32> = (0..n).map(|i| ((i / 64) % 7 == 0) as u8 as f32).collect();
    let cfg = LossConfig::default();
    c.bench_function("hybrid_loss_b8", |b| b.iter(|| hybrid_loss(black_box(&pred), &gt, &cfg).unwrap()));
}

criterion_group!(benches, conv, unet, loss);
criterion_main!(benches);
