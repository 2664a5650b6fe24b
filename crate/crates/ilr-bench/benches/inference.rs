//! Microbenchmarks for the hot inference paths: E-step responsibilities,
//! M-step closed-form updates, posterior-predictive queries, and short
//! full-batch versus minibatch fits.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use nalgebra::DVector;
use std::hint::black_box;

use ilr_bench::{arm_model, estep_inputs, random_stats, sinc_model};
use ilr_core::data::sinc_hetero;
use ilr_core::vbem::{e_step, fit, m_step};
use ilr_core::{
    FeatureMap, FitConfig, GatingPriorKind, Hyperparams, ModelDims, PredictOptions, Predictor,
};

fn bench_e_step(c: &mut Criterion) {
    let (model, ds) = sinc_model(2048, 16);
    let mut group = c.benchmark_group("e_step");
    for n in [256usize, 1024] {
        let (xg, xf, y) = estep_inputs(&model, &ds, n);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| e_step(black_box(&model), &xg, &xf, &y).unwrap());
        });
    }
    group.finish();
}

fn bench_m_step(c: &mut Criterion) {
    let dims = ModelDims { input_dim: 12, feature_dim: 13, output_dim: 4 };
    let k = 16;
    let stats = random_stats(k, dims, 1024, 3);
    let hyper = Hyperparams::default_for(dims, k, GatingPriorKind::StickBreaking, 1.0).unwrap();
    c.bench_function("m_step/k16_mx12_d4", |b| {
        b.iter(|| m_step(black_box(&stats), &hyper).unwrap());
    });
}

fn bench_predict(c: &mut Criterion) {
    let (model, ds) = arm_model(4000, 12);
    let predictor = Predictor::new(&model, PredictOptions::default()).unwrap();
    let query = ds.inputs.row(17).transpose();
    c.bench_function("predict/arm_single_query", |b| {
        b.iter(|| predictor.predict(black_box(&query)).unwrap());
    });

    let (model1, _) = sinc_model(1000, 16);
    let predictor1 = Predictor::new(&model1, PredictOptions::default()).unwrap();
    let q1 = DVector::from_element(1, 0.3);
    c.bench_function("predict/sinc_single_query", |b| {
        b.iter(|| predictor1.predict(black_box(&q1)).unwrap());
    });
}

fn bench_fit(c: &mut Criterion) {
    let ds = sinc_hetero(512, 11);
    let fmap = FeatureMap::affine(1).unwrap();
    let hyper = Hyperparams::default_for(
        ModelDims { input_dim: 1, feature_dim: 2, output_dim: 1 },
        8,
        GatingPriorKind::StickBreaking,
        1.0,
    )
    .unwrap();
    let full = FitConfig { restarts: 1, max_iters: 10, ..FitConfig::default() };
    let mini = FitConfig { minibatch: 128, ..full.clone() };

    let mut group = c.benchmark_group("fit_10_iters");
    group.sample_size(20);
    group.bench_function("full_batch", |b| {
        b.iter(|| fit(black_box(&ds), &fmap, &hyper, &full).unwrap());
    });
    group.bench_function("minibatch_128", |b| {
        b.iter(|| fit(black_box(&ds), &fmap, &hyper, &mini).unwrap());
    });
    group.finish();
}

criterion_group!(benches, bench_e_step, bench_m_step, bench_predict, bench_fit);
criterion_main!(benches);
