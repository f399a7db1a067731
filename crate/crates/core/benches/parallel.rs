//! Sequential vs rayon execution for the data-parallel hot paths: one
//! training epoch (per-sequence gradients) and test-split evaluation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use coopgame::data::{synth_generate, window_split, SynthKind, SynthSpec, WindowOptions, WindowedDataset};
use coopgame::eval::{evaluate, EvalModel};
use coopgame::game::{train, GameConfig, OptimizerConfig};
use coopgame::parallel::Execution;
use coopgame::predictor::{Parameterization, Predictor, PredictorConfig};

fn dataset() -> WindowedDataset {
    let series = synth_generate(&SynthSpec {
        kind: SynthKind::SinusoidMix {
            periods: vec![5.0, 20.0],
        },
        channels: 2,
        length: 1200,
        noise_std: 0.1,
        seed: 1,
    })
    .unwrap();
    let mut opts = WindowOptions::new(30, 10);
    opts.stride = Some(10);
    window_split(&series, &opts, 3).unwrap()
}

fn model() -> Predictor {
    let mut cfg = PredictorConfig::new(2, Parameterization::Implicit);
    cfg.hidden = 16;
    cfg.dense1 = 16;
    cfg.dense2 = 16;
    Predictor::new(cfg).unwrap()
}

fn game() -> GameConfig {
    GameConfig {
        lambda: 1.0,
        epsilon: 3,
        reg_fraction: 0.5,
        optimizer: OptimizerConfig {
            epochs: 1,
            batch_size: 32,
            ..OptimizerConfig::default()
        },
        ..GameConfig::default()
    }
}

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_train_epoch(c: &mut Criterion) {
    let data = dataset();
    let cfg = game();
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| train(model(), &data, &cfg, exec, &mut |_| Ok(())).unwrap())
        });
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let data = dataset();
    let m = model();
    let settings = game().explainer_settings();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate(EvalModel::Predictor(&m), &data.test, 30, &settings, exec, "").unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_train_epoch, bench_evaluate);
criterion_main!(benches);
