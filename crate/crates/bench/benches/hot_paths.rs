//! Criterion benchmarks for the hot paths: masked attention, the encoder
//! forward, DDIM sampling, simulator stepping, rendering, and chain
//! generation.

use criterion::{criterion_group, criterion_main, Criterion};
use lvla_core::autodiff::{Tape, Tensor};
use lvla_core::config::{Config, ModelConfig, SimConfig};
use lvla_core::model::{
    build_mask, forward_encoder, sample_ddim, GraphParams, MaskPhase, PhaseModalities, Policy,
    TokenLayout,
};
use lvla_core::rng::Rng;
use lvla_core::sim::{detect, render, reset, step, Action8, PerturbationSpec, TaskId, View};
use std::hint::black_box;

fn bench_masked_attention(c: &mut Criterion) {
    let n = 25;
    let mut rng = Rng::new(1);
    let p = Tensor::<f32>::from_vec(&[n, n], (0..n * n).map(|_| rng.normal() as f32).collect());
    let layout = TokenLayout::from_config(&ModelConfig::default());
    let mask = build_mask(MaskPhase::Moving, &layout, &PhaseModalities::default());
    c.bench_function("masked_softmax_25", |b| {
        b.iter(|| {
            let tape: Tape<f32> = Tape::new();
            let v = tape.constant(p.clone());
            black_box(v.masked_softmax(&mask.m).tensor())
        })
    });
}

fn bench_encoder_forward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let policy: Policy<f32> = Policy::init(&cfg, 7);
    let mut rng = Rng::new(2);
    let n = policy.layout.n_tokens();
    let e_pre = Tensor::<f32>::from_vec(
        &[n, cfg.d_model],
        (0..n * cfg.d_model).map(|_| rng.normal() as f32).collect(),
    );
    let layout = policy.layout;
    let mask = build_mask(MaskPhase::Moving, &layout, &PhaseModalities::default());
    c.bench_function("transformer_forward_25x64", |b| {
        b.iter(|| {
            let tape: Tape<f32> = Tape::new();
            let g = GraphParams::inject(&tape, &policy.params, false);
            let x = tape.constant(e_pre.clone());
            black_box(forward_encoder(&tape, &g, &cfg, x, &mask.m).tensor())
        })
    });
}

fn bench_ddim_sample(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let policy: Policy<f32> = Policy::init(&cfg, 3);
    let mut rng = Rng::new(4);
    let n = policy.layout.n_tokens();
    let e_post = Tensor::<f32>::from_vec(
        &[n, cfg.d_model],
        (0..n * cfg.d_model).map(|_| rng.normal() as f32).collect(),
    );
    let active = vec![true; n];
    c.bench_function("ddim_sample_k8", |b| {
        b.iter(|| {
            let tape: Tape<f32> = Tape::new();
            let g = GraphParams::inject(&tape, &policy.params, false);
            let ep = tape.constant(e_post.clone());
            let mut r = Rng::new(11);
            black_box(sample_ddim(&tape, &g, &cfg, ep, &active, 8, &mut r).unwrap())
        })
    });
}

fn bench_sim(c: &mut Criterion) {
    let sim = SimConfig::default();
    let state = reset(5, 3);
    let a = Action8::hold(&state);
    c.bench_function("sim_step", |b| b.iter(|| black_box(step(&state, &a, &sim).unwrap())));
    c.bench_function("render_static_24", |b| {
        b.iter(|| black_box(render(&state, View::Static, &PerturbationSpec::identity(), &sim)))
    });
    c.bench_function("detect_oracle", |b| {
        b.iter(|| black_box(detect(&state, TaskId::PickRed.target(), &sim)))
    });
}

fn bench_chain_gen(c: &mut Criterion) {
    c.bench_function("gen_chain_len10", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            black_box(lvla_core::taskchain::gen_chain(seed, 10).unwrap())
        })
    });
}

fn bench_expert_subtask(c: &mut Criterion) {
    let cfg = Config::default();
    c.bench_function("expert_subtask", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            let start = lvla_core::sim::feasible_start(seed, TaskId::PickRed, &cfg.sim);
            let mut rng = Rng::new(seed);
            black_box(
                lvla_core::sim::run_expert_subtask(&start, TaskId::PickRed, &cfg.sim, &mut rng, 120)
                    .unwrap(),
            )
        })
    });
}

criterion_group!(
    benches,
    bench_masked_attention,
    bench_encoder_forward,
    bench_ddim_sample,
    bench_sim,
    bench_chain_gen,
    bench_expert_subtask
);
criterion_main!(benches);
