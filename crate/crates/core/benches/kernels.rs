//! Sequential vs parallel execution of the batch-level loops: convolution
//! forward/backward and one SAN training step.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flowsan::learn::kernels::{conv2d_backward, conv2d_forward, ConvGeom};
use flowsan::learn::{Exec, Graph, Tensor};
use flowsan::models::{SanConfig, SanModel};
use flowsan::seed;
use rand::Rng;

const BATCH: usize = 32;

fn random(len: usize, label: &str) -> Vec<f32> {
    let mut rng = seed::rng(1, label);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn conv(c: &mut Criterion) {
    let g = ConvGeom { cin: 8, h: 32, w: 32, cout: 16, k: 3, stride: 1, pad: 1 };
    let x = random(BATCH * 8 * 32 * 32, "x");
    let w = random(16 * 8 * 9, "w");
    let b = random(16, "b");
    let dout = random(BATCH * 16 * 32 * 32, "dout");
    let mut out = vec![0.0f32; BATCH * 16 * 32 * 32];
    let mut group = c.benchmark_group("conv2d");
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::new("forward", format!("{exec:?}")), &exec, |bench, &e| {
            bench.iter(|| conv2d_forward(e, &g, BATCH, &x, &w, &b, &mut out))
        });
        group.bench_with_input(BenchmarkId::new("backward", format!("{exec:?}")), &exec, |bench, &e| {
            bench.iter(|| conv2d_backward(e, &g, BATCH, &x, &w, &dout, true, true))
        });
    }
    group.finish();
}

fn san_step(c: &mut Criterion) {
    let san = SanModel::<f32>::new(SanConfig::default(), 2).unwrap();
    let img = Tensor::new(vec![BATCH, 1, 32, 32], random(BATCH * 1024, "img")).unwrap();
    let p = Tensor::new(vec![BATCH, 1, 32, 32], random(BATCH * 1024, "proto")).unwrap();
    let mut group = c.benchmark_group("san");
    group.sample_size(20);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::new("forward_backward", format!("{exec:?}")), &exec, |bench, &e| {
            bench.iter(|| {
                let mut g = Graph::new(e);
                let (i, s, o) = (g.constant(img.clone()), g.constant(p.clone()), g.constant(p.clone()));
                let out = san.graph_forward(&mut g, i, s, o).unwrap();
                let loss = g.mean(out);
                g.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv, san_step);
criterion_main!(benches);
