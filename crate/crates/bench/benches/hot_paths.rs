use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use manifold_explore::analysis::{compute_snr_arrays, farthest_point_sampling, propose_along_dimension};
use manifold_explore::envsim::reset;
use manifold_explore::nn::RngStream;
use manifold_explore::rollout::{run_episodes, EpisodeSpec};
use manifold_explore::{RolloutMode, Source, TrainConfig, Trainer};
use manifold_explore_bench::default_model;
use ndarray::Array2;

fn train_step(c: &mut Criterion) {
    let (model, data) = default_model(10);
    c.bench_function("train_step", |b| {
        b.iter_batched(
            || (model.clone(), Trainer::new(TrainConfig::default()).unwrap()),
            |(mut m, mut t)| t.step(&mut m.policy, m.plugin.as_mut(), &data).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn ddim(c: &mut Criterion) {
    let (model, data) = default_model(4);
    let obs = data.observations().slice(ndarray::s![..64, ..]).to_owned();
    let cond = model.policy.encode_batch(obs.view()).unwrap();
    let mut rng = RngStream::new(0, "bench/ddim");
    let width = model.policy.config.chunk_width();
    let init = Array2::from_shape_vec((64, width), rng.normal_vec(64 * width)).unwrap();
    c.bench_function("ddim_sample_batch_64", |b| b.iter(|| model.policy.ddim_sample_batch(cond.view(), init.view()).unwrap()));
}

fn fps(c: &mut Criterion) {
    let mut rng = RngStream::new(0, "bench/fps");
    let points: Vec<Vec<f64>> = (0..256).map(|_| rng.normal_vec(16)).collect();
    c.bench_function("fps_256x16_k8", |b| b.iter(|| farthest_point_sampling(black_box(&points), 8, 0).unwrap()));
}

fn snr(c: &mut Criterion) {
    let mut rng = RngStream::new(0, "bench/snr");
    let (n, d) = (2000, 16);
    let mu = Array2::from_shape_vec((n, d), rng.normal_vec(n * d)).unwrap();
    let sigma = mu.mapv(|v: f64| 0.1 + v.abs());
    c.bench_function("snr_2000x16", |b| b.iter(|| compute_snr_arrays(mu.view(), sigma.view()).unwrap()));
}

fn rollouts(c: &mut Criterion) {
    let (model, _) = default_model(2);
    let env = model.env.clone();
    let specs: Vec<EpisodeSpec> = (0..8).map(|s| EpisodeSpec { start_seed: s, attempt: 0 }).collect();
    let mut g = c.benchmark_group("rollouts");
    g.sample_size(10);
    g.bench_function("explore_8_episodes", |b| {
        b.iter(|| run_episodes(&model, &env, &specs, RolloutMode::Explore, 2.0, Source::Rollout, 1).unwrap())
    });
    g.finish();
}

fn proposals(c: &mut Criterion) {
    let (model, _) = default_model(2);
    let env = model.env.clone();
    let (state, _) = reset(&env, 7);
    let mut g = c.benchmark_group("proposals");
    g.sample_size(10);
    g.bench_function("batch_64_k8", |b| b.iter(|| propose_along_dimension(&model, &env, &state, 0, 64, 8, 3.0).unwrap()));
    g.finish();
}

criterion_group!(benches, train_step, ddim, fps, snr, rollouts, proposals);
criterion_main!(benches);
