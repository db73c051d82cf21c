//! Batch feature extraction and dataset synthesis, parallel against
//! sequential. Build with `--no-default-features` to make the "parallel"
//! variants sequential as well.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fobprint::synth::{generate_dataset, ScenarioConfig};
use fobprint::{FeatureExtractor, IqBuffer, ModulationKind};

const BATCH: usize = 16;

fn extraction(c: &mut Criterion) {
    let cfg = ScenarioConfig::new(ModulationKind::Fsk, 7, BATCH);
    let ds = generate_dataset(&cfg).unwrap();
    let fx = FeatureExtractor::new(cfg.modulation(), cfg.receiver).unwrap();
    let refs: Vec<&IqBuffer> = ds.captures.iter().map(|c| &c.iq).collect();

    let mut g = c.benchmark_group("extract_batch");
    g.sample_size(10);
    g.bench_with_input(BenchmarkId::new("parallel", BATCH), &refs, |b, r| {
        b.iter(|| black_box(fx.extract_batch(r)))
    });
    g.bench_with_input(BenchmarkId::new("sequential", BATCH), &refs, |b, r| {
        b.iter(|| black_box(fx.extract_batch_seq(r)))
    });
    g.finish();
}

fn extract_one(c: &mut Criterion) {
    let cfg = ScenarioConfig::new(ModulationKind::Fsk, 7, 1);
    let ds = generate_dataset(&cfg).unwrap();
    let fx = FeatureExtractor::new(cfg.modulation(), cfg.receiver).unwrap();
    let iq = &ds.captures[0].iq;
    let mut g = c.benchmark_group("extract");
    g.sample_size(20);
    g.bench_function("single capture", |b| b.iter(|| black_box(fx.extract(iq))));
    g.finish();
}

criterion_group!(benches, extraction, extract_one);
criterion_main!(benches);
