//! Benchmarks for the hot paths: optimal matching, the detector forward
//! pass, the two-stage assignment, the metric suite, and logit adjustment.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ssrcnn_bench::{assignment_fixture, eval_fixture, forward_fixture, logit_fixture, random_cost};
use ssrcnn_core::assignment::two_stage_assign;
use ssrcnn_core::calibration::{logit_adjust, FrequencyTable};
use ssrcnn_core::heads::TripletDetector;
use ssrcnn_core::losses::{FocalParams, LossCoefficients};
use ssrcnn_core::matching::hungarian;
use ssrcnn_core::metrics::{evaluate, EvalOptions};

fn bench_hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    for &n in &[8usize, 32, 128] {
        let cost = random_cost(n, n, 11);
        group.bench_with_input(BenchmarkId::new("square", n), &cost, |b, cost| {
            b.iter(|| hungarian(cost).unwrap())
        });
    }
    let wide = random_cost(16, 300, 12);
    group.bench_function("16x300", |b| b.iter(|| hungarian(&wide).unwrap()));
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let (cfg, queries, fmap) = forward_fixture(32, 21);
    let detector = TripletDetector::seeded(cfg, 22).unwrap();
    c.bench_function("forward_32q_2heads", |b| {
        b.iter(|| detector.forward(&queries, &fmap).unwrap())
    });
}

fn bench_assignment(c: &mut Criterion) {
    let (scene, aux, preds) = assignment_fixture(60, 31);
    let coeffs = LossCoefficients::default();
    let focal = FocalParams::default();
    let cfg = ssrcnn_core::assignment::AssignConfig::default();
    c.bench_function("two_stage_assign_60_slots", |b| {
        b.iter(|| two_stage_assign(&preds, &scene, &aux, &coeffs, &focal, &cfg).unwrap())
    });
}

fn bench_metrics(c: &mut Criterion) {
    let (ranked, gts) = eval_fixture(40, 50, 41);
    let opts = EvalOptions::default();
    c.bench_function("evaluate_40_images", |b| {
        b.iter(|| evaluate(&ranked, &gts, &opts, None).unwrap())
    });
}

fn bench_calibration(c: &mut Criterion) {
    let logits = logit_fixture(1000, 50, 51);
    let counts: Vec<u64> = (1..=50).map(|i| i * i).collect();
    let freqs = FrequencyTable::from_counts(&counts).unwrap();
    c.bench_function("logit_adjust_1000x50", |b| {
        b.iter(|| {
            for z in &logits {
                logit_adjust(z, &freqs, 0.3).unwrap();
            }
        })
    });
}

criterion_group!(
    benches,
    bench_hungarian,
    bench_forward,
    bench_assignment,
    bench_metrics,
    bench_calibration
);
criterion_main!(benches);
