//! Kernel throughput under the default rayon pool and a one-thread pool.
//! Build with `--no-default-features` to time the sequential fallback,
//! which has no rayon at all.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use radnet::models::{build_baseline_cnn_seeded, BaselineCnnConfig};
use radnet::ops::{conv2d, conv2d_backward, Mode};
use radnet::Tensor;

fn pattern(shape: [usize; 4], salt: usize) -> Tensor {
    Tensor::from_fn(shape, |i| (((i * 7919 + salt) % 1009) as f32 / 1009.0) - 0.5).unwrap()
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("rayon-default", None), ("rayon-1-thread", Some(one))]
}

#[cfg(not(feature = "parallel"))]
fn pools() -> Vec<(&'static str, Option<()>)> {
    vec![("sequential", None)]
}

#[cfg(feature = "parallel")]
fn within<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn within<R>(_: &Option<()>, f: impl FnOnce() -> R) -> R {
    f()
}

fn conv(c: &mut Criterion) {
    let x = pattern([8, 32, 32, 32], 1);
    let w = pattern([64, 32, 3, 3], 2);
    let b = Tensor::zeros([64]).unwrap();
    let y = conv2d(&x, &w, Some(&b), 1, 1).unwrap();
    let dy = y.map(|v| v * 0.5);
    let mut group = c.benchmark_group("conv2d_8x32x32x32_to_64");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("forward", name), |bch| {
            bch.iter(|| within(&pool, || conv2d(black_box(&x), &w, Some(&b), 1, 1).unwrap()))
        });
        group.bench_function(BenchmarkId::new("backward", name), |bch| {
            bch.iter(|| within(&pool, || conv2d_backward(black_box(&x), &w, &dy, 1, 1, true).unwrap()))
        });
    }
    group.finish();
}

fn baseline_forward(c: &mut Criterion) {
    let model = build_baseline_cnn_seeded(&BaselineCnnConfig::default(), 0).unwrap();
    let batch = pattern([32, 1, 32, 32], 3);
    let mut group = c.benchmark_group("baseline_forward_batch32");
    for (name, pool) in pools() {
        group.bench_function(name, |bch| {
            bch.iter(|| within(&pool, || model.forward(black_box(&batch), Mode::Eval).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, conv, baseline_forward);
criterion_main!(benches);
