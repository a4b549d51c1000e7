//! Criterion benchmarks for the hot paths: one BPTT step per cell kind, the
//! CRF forward-backward, λ-trajectory sampling, and top-k SVD.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use seqmix_core::crf::crf_nll_grad;
use seqmix_core::lambda::{sample_trajectory, LambdaConfig, LambdaTrajectory};
use seqmix_core::mixup::{train_step, Head, MixedPair};
use seqmix_core::numkernel::svd_top_k;
use seqmix_core::recurrent::{bptt, CellKind, ModelInit};
use seqmix_core::{Features, Labels, Matrix, Method, Model, Rng, Sample};

fn random_model(kind: CellKind, d: usize, h: usize, c: usize, seed: u64) -> Model {
    let mut rng = Rng::new(seed);
    let mut model = Model::init(
        &ModelInit {
            cell: kind,
            input_dim: d,
            hidden: h,
            classes: c,
            vocab: None,
            bidirectional: false,
            crf: false,
        },
        &mut rng,
    );
    let flat: Vec<f64> = model.to_flat().iter().map(|_| rng.normal() * 0.3).collect();
    model.set_flat(&flat);
    model
}

fn random_sample(d: usize, t: usize, c: usize, seed: u64) -> Sample {
    let mut rng = Rng::new(seed);
    Sample {
        features: Features::Dense((0..t).map(|_| (0..d).map(|_| rng.normal()).collect()).collect()),
        labels: Labels::Tags((0..t).map(|_| rng.uniform_usize(c)).collect()),
    }
}

fn bench_bptt(c: &mut Criterion) {
    let mut group = c.benchmark_group("bptt_t32_h32");
    for kind in [CellKind::Rnn, CellKind::Gru, CellKind::Lstm] {
        let model = random_model(kind, 8, 32, 4, 1);
        let sample = random_sample(8, 32, 4, 2);
        let targets: Vec<Vec<f64>> = sample
            .tags()
            .unwrap()
            .iter()
            .map(|&y| {
                let mut v = vec![0.0; 4];
                v[y] = 1.0;
                v
            })
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(format!("{kind:?}")), &(), |b, _| {
            b.iter(|| bptt(&model, &sample, &targets).unwrap())
        });
    }
    group.finish();
}

fn bench_mixup_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("mixup_step_gru_t32_h32");
    let model = random_model(CellKind::Gru, 8, 32, 4, 3);
    let a = random_sample(8, 32, 4, 4);
    let b_sample = random_sample(8, 32, 4, 5);
    let mut rng = Rng::new(6);
    let traj = {
        let cfg = LambdaConfig::new(0.5, 0.5, 32).unwrap();
        sample_trajectory(&cfg, &mut rng).unwrap()
    };
    let pair = MixedPair::new(a, b_sample, traj).unwrap();
    for method in [Method::InputMixup, Method::Pom, Method::Ttm] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{method:?}")), &(), |bch, _| {
            bch.iter(|| train_step(&model, &pair, method, Head::Softmax).unwrap())
        });
    }
    group.finish();
}

fn bench_crf(c: &mut Criterion) {
    let mut rng = Rng::new(7);
    let t = 32;
    let classes = 9;
    let emissions: Vec<Vec<f64>> =
        (0..t).map(|_| (0..classes).map(|_| rng.normal()).collect()).collect();
    let mut transitions = Matrix::zeros(classes, classes);
    for v in transitions.data_mut() {
        *v = rng.normal() * 0.5;
    }
    let tags: Vec<usize> = (0..t).map(|_| rng.uniform_usize(classes)).collect();
    c.bench_function("crf_nll_grad_t32_c9", |b| {
        b.iter(|| crf_nll_grad(&emissions, &transitions, &tags, None).unwrap())
    });
}

fn bench_lambda(c: &mut Criterion) {
    let cfg = LambdaConfig::new(0.5, 0.5, 64).unwrap();
    let mut rng = Rng::new(8);
    c.bench_function("lambda_trajectory_t64", |b| {
        b.iter(|| -> LambdaTrajectory { sample_trajectory(&cfg, &mut rng).unwrap() })
    });
}

fn bench_svd(c: &mut Criterion) {
    let mut rng = Rng::new(9);
    let mut m = Matrix::zeros(32, 200);
    for v in m.data_mut() {
        *v = rng.normal();
    }
    c.bench_function("svd_top20_32x200", |b| b.iter(|| svd_top_k(&m, 20).unwrap()));
}

criterion_group!(benches, bench_bptt, bench_mixup_steps, bench_crf, bench_lambda, bench_svd);
criterion_main!(benches);
