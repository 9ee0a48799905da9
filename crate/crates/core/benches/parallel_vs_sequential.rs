use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use glaudio::analysis::sweep_steps;
use glaudio::data::synth_sbm;
use glaudio::encoder::{propagate, WaveConfig};
use glaudio::graph::Graph;
use glaudio::operator::{build_operator, Variant};
use glaudio::par;
use glaudio::train::{train, Pipeline, TrainConfig};

const MODES: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn sbm(n: usize) -> Graph {
    synth_sbm(n, 3, 0.05, 0.005, 0.5, 7).unwrap().to_graph().unwrap().0
}

fn config() -> TrainConfig {
    TrainConfig {
        steps: 20,
        step_size: 0.1,
        hidden_dim: 16,
        epochs: 1,
        early_stopping: None,
        ..TrainConfig::default()
    }
}

fn bench_propagate(c: &mut Criterion) {
    let g = sbm(4000);
    let op = build_operator(&g, Variant::Normalized);
    let x = g.features().clone();
    let wave = WaveConfig::new(50, 0.1).unwrap();
    let mut group = c.benchmark_group("propagate");
    for (name, on) in MODES {
        par::set_parallel(on);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| propagate(&op, &x, wave).unwrap())
        });
    }
    group.finish();
}

fn bench_decode(c: &mut Criterion) {
    let g = sbm(2000);
    let cfg = config();
    let pipe = Pipeline::new(&g, &cfg).unwrap();
    let params = pipe.init_params().unwrap();
    let all: Vec<usize> = (0..g.num_vertices()).collect();
    let enc = pipe.encode(&params, &all).unwrap();
    let mut group = c.benchmark_group("decode");
    for (name, on) in MODES {
        par::set_parallel(on);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pipe.predict(&params, &enc.seqs).unwrap())
        });
    }
    group.finish();
}

fn bench_epoch(c: &mut Criterion) {
    let g = sbm(1000);
    let cfg = config();
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    for (name, on) in MODES {
        par::set_parallel(on);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train(&g, &cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let g = sbm(300);
    let cfg = TrainConfig {
        epochs: 5,
        hidden_dim: 8,
        ..config()
    };
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, on) in MODES {
        par::set_parallel(on);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sweep_steps(&g, &cfg, &[8, 16, 32], &[0, 1], 2.0).unwrap())
        });
    }
    group.finish();
    par::set_parallel(true);
}

criterion_group!(benches, bench_propagate, bench_decode, bench_epoch, bench_sweep);
criterion_main!(benches);
