use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gcart::classical::hist_equalize;
use gcart::corruptions::{CorruptionKind, CorruptionSpec};
use gcart::data::synthetic;
use gcart::enhancer::Enhancer;
use gcart::eval::{corruption_sweep, evaluate};
use gcart::model::{Model, ModelShape};
use gcart::par;
use gcart::softhist::{soft_histogram_batch, HistogramConfig};
use gcart::tonecurve::MonoConfig;
use gcart::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn model() -> Model {
    let shape = ModelShape {
        input: [32, 32, 3],
        head_hidden: 128,
        classes: 10,
        hypernet_hidden: 32,
        histogram: HistogramConfig::default(),
        mono: MonoConfig::default(),
    };
    Model::init(Enhancer::GcArt, &shape, 42).unwrap()
}

fn histograms(c: &mut Criterion) {
    let ds = synthetic(256, 0);
    let cfg = HistogramConfig::default();
    let mut g = c.benchmark_group("soft_histogram_batch");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| soft_histogram_batch(black_box(&ds.images), &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn equalize(c: &mut Criterion) {
    let ds = synthetic(256, 1);
    let mut g = c.benchmark_group("hist_equalize_batch");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::map(black_box(&ds.images), exec, hist_equalize))
        });
    }
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let ds = synthetic(500, 2);
    let m = model();
    let spec = CorruptionSpec::new(CorruptionKind::Brightness, 3).unwrap();
    let mut g = c.benchmark_group("evaluate_brightness_s3");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(&m, black_box(&ds), Some(spec), exec).unwrap())
        });
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let ds = synthetic(100, 3);
    let m = model();
    let mut g = c.benchmark_group("corruption_sweep");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| corruption_sweep(&m, black_box(&ds), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, histograms, equalize, evaluation, sweep);
criterion_main!(benches);
