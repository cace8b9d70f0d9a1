use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nndiff_bench::{mixture_cloud, vp_process};
use nndiff_core::analysis::{energy_distance, ks_two_sample};
use nndiff_core::divergence::{kl_quadrature, ScalarDist};
use nndiff_core::loss::Pairing;
use nndiff_core::rng::stream;
use nndiff_core::sampler::{log_likelihood, sample, ReverseSpec};
use nndiff_core::score::{mlp_gradients, AnalyticScore, Example};
use nndiff_core::walk::terminal_states;
use nndiff_core::{GaussianMixture, IncrementKind, MlpDenoiser};
use rand::Rng;

fn kl(c: &mut Criterion) {
    let p = ScalarDist::uniform_with_sd(0.3, 0.7).unwrap();
    let q = ScalarDist::laplace_with_sd(-0.4, 1.3).unwrap();
    c.bench_function("kl_quadrature/uniform-laplace", |b| {
        b.iter(|| kl_quadrature(black_box(&p), black_box(&q)))
    });
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("terminal_states");
    group.sample_size(10);
    let spec = vp_process(128);
    for kind in IncrementKind::ALL {
        group.bench_with_input(BenchmarkId::from_parameter(kind), &kind, |b, &kind| {
            b.iter(|| terminal_states(&spec, kind, &vec![0.0], 10_000, 1).unwrap())
        });
    }
    group.finish();
}

fn two_sample(c: &mut Criterion) {
    let a = mixture_cloud(2000, 1);
    let b = mixture_cloud(2000, 2);
    c.bench_function("energy_distance/2000x2000", |bch| {
        bch.iter(|| energy_distance(black_box(&a), black_box(&b)).unwrap())
    });
    let (x, y) = (a.column(0), b.column(0));
    c.bench_function("ks_two_sample/2000x2000", |bch| {
        bch.iter(|| ks_two_sample(black_box(&x), black_box(&y)).unwrap())
    });
}

fn gradients(c: &mut Criterion) {
    let model = MlpDenoiser::init(2, 64, 3);
    let mut rng = stream(4);
    let batch: Vec<Example> = (0..64)
        .map(|_| Example {
            x: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            t: rng.random_range(0.0..1.0),
            eps: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            w: 0.1,
            v: 0.2f64.sqrt(),
        })
        .collect();
    let mut group = c.benchmark_group("mlp_gradients");
    for pairing in Pairing::ALL {
        group.bench_with_input(BenchmarkId::from_parameter(pairing), &pairing, |b, &p| {
            b.iter(|| mlp_gradients(black_box(&model), black_box(&batch), p))
        });
    }
    group.finish();
}

fn reverse(c: &mut Criterion) {
    let spec = vp_process(256);
    let score = AnalyticScore::new(GaussianMixture::two_component_2d(), spec.clone());
    let mut group = c.benchmark_group("reverse");
    group.sample_size(10);
    let rs = ReverseSpec {
        spec: &spec,
        score: &score,
        kind: IncrementKind::Laplace,
    };
    group.bench_function("sample/1000 chains", |b| {
        b.iter(|| sample(&rs, 1000, 5).unwrap())
    });
    group.bench_function("log_likelihood/1 point", |b| {
        b.iter(|| log_likelihood(black_box(&[0.3, -0.2]), &spec, &score).unwrap())
    });
    group.finish();
}

criterion_group!(benches, kl, forward, two_sample, gradients, reverse);
criterion_main!(benches);
