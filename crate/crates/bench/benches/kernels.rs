use criterion::{criterion_group, criterion_main, Criterion};
use icl_core::baselines::{gd_trace, ols_trace};
use icl_core::linalg::{gaussian_matrix, pinv, svd};
use icl_core::promptgen::{sample_batch, tokenize};
use icl_core::transformer::{forward_batch, loss_and_grad, ModelConfig, Params};
use icl_core::{PromptDistribution, TokenSequence};
use std::hint::black_box;

fn linalg(c: &mut Criterion) {
    let a = gaussian_matrix(64, 32, 1);
    c.bench_function("svd_64x32", |b| b.iter(|| svd(black_box(&a)).unwrap()));
    c.bench_function("pinv_64x32", |b| {
        b.iter(|| pinv(black_box(&a), None).unwrap())
    });
}

fn transformer(c: &mut Criterion) {
    let cfg = ModelConfig::desk(8, 16, 1);
    let params = Params::<f32>::init(&cfg).unwrap();
    let prompts = sample_batch(&PromptDistribution::full(8, 16), 64, 2).unwrap();
    let seqs: Vec<TokenSequence> = prompts.iter().map(tokenize).collect();
    let targets: Vec<Vec<f64>> = prompts.iter().map(|p| p.ys.clone()).collect();
    c.bench_function("desk_forward_batch64", |b| {
        b.iter(|| forward_batch(black_box(&params), &seqs, false).unwrap())
    });
    c.bench_function("desk_loss_and_grad_batch64", |b| {
        b.iter(|| loss_and_grad(black_box(&params), &seqs, &targets, true).unwrap())
    });
}

fn baselines(c: &mut Criterion) {
    let prompts = sample_batch(&PromptDistribution::full(8, 16), 8, 3).unwrap();
    c.bench_function("ols_trace_d8_k16", |b| {
        b.iter(|| ols_trace(black_box(&prompts[0])).unwrap())
    });
    c.bench_function("gd_trace_d8_k16_1000iters", |b| {
        b.iter(|| gd_trace(black_box(&prompts[1]), 0.01, 1000, 4).unwrap())
    });
}

criterion_group!(benches, linalg, transformer, baselines);
criterion_main!(benches);
