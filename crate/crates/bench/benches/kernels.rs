use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kcp_core::assembly::{check_validity, ValidityConfig};
use kcp_core::ccvae::{VaeConfig, VaeSample, VaeTrainer};
use kcp_core::complex::{build_hasse_diagram, flatten_to_particles};
use kcp_core::dataio::{generate, generate_record, normalize_and_pad, Kind};
use kcp_core::flow::cluster_inference_particles;
use kcp_core::geometry::chamfer_distance;
use kcp_core::nn::{AdamWConfig, AttentionBlock};
use kcp_core::tensor::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(c: &mut Criterion) {
    let a = Tensor::<f32>::from_fn(&[128, 128], |i| (i % 17) as f32 * 0.1);
    let b = Tensor::<f32>::from_fn(&[128, 128], |i| (i % 13) as f32 * 0.1);
    c.bench_function("matmul 128x128", |bench| {
        bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
    });

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let block = AttentionBlock::new(&mut store, &mut rng, "block", 64, 4);
    let x = Tensor::<f32>::from_fn(&[64, 64], |_| rng.random_range(-1.0..1.0));
    c.bench_function("attention block fwd+bwd 64x64", |bench| {
        bench.iter(|| {
            let mut g = Graph::new(&store);
            let xv = g.constant(x.clone());
            let y = block.forward(&mut g, xv, None).unwrap();
            let s = g.square(y);
            let loss = g.mean(s);
            g.backward(loss).unwrap()
        })
    });
}

fn complex(c: &mut Criterion) {
    let model = generate(Kind::HoleBox, 0, false).unwrap();
    c.bench_function("hasse + flatten (hole box)", |bench| {
        bench.iter(|| {
            let d = build_hasse_diagram(black_box(&model)).unwrap();
            flatten_to_particles(&d, None)
        })
    });
    let config = ValidityConfig::default();
    c.bench_function("validity check (hole box)", |bench| {
        bench.iter(|| check_validity(black_box(&model), &config))
    });
}

fn geometry(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cloud =
        |n: usize| -> Vec<[f64; 3]> { (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect() };
    let (a, b) = (cloud(2000), cloud(2000));
    c.bench_function("chamfer 2000x2000", |bench| {
        bench.iter(|| chamfer_distance(black_box(&a), black_box(&b)).unwrap())
    });
}

fn flow(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let latents: Vec<f64> = (0..128 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("cluster 128 particles", |bench| {
        bench.iter(|| cluster_inference_particles(black_box(&latents), 16, 0.5).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch: Vec<VaeSample> = [Kind::Box, Kind::Prism(5)]
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let r = generate_record(k, i as u64, false).unwrap();
            VaeSample::from_padded(&normalize_and_pad(&r, 64, &mut rng).unwrap()).unwrap()
        })
        .collect();
    let mut trainer = VaeTrainer::<f32>::new(VaeConfig::tiny(), AdamWConfig::default(), 0).unwrap();
    c.bench_function("vae train step (tiny, batch 2)", |bench| {
        bench.iter(|| trainer.train_step(&batch).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = tensor, complex, geometry, flow, training
}
criterion_main!(benches);
