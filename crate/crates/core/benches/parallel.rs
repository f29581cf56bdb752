use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use smlm::masking::{soft_mask, MaskSchemeConfig};
use smlm::midi::prepare;
use smlm::net::{init_params, ModelConfig, ModelParams};
use smlm::rng;
use smlm::score::{Excerpt, Note};
use smlm::train::{evaluate, train_step, AdamConfig, AdamState, BatchItem};
use smlm::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn excerpts(n: usize) -> Vec<Excerpt> {
    let mut r = rng::stream(5, &[]);
    (0..n)
        .map(|_| {
            let notes: Vec<Note> = (0..16)
                .map(|_| {
                    let onset = r.random_range(0..60u8);
                    Note::new(r.random_range(0..36), onset, r.random_range(1..=4)).unwrap()
                })
                .collect();
            Excerpt::from_notes(&notes, 64).unwrap()
        })
        .collect()
}

fn batch_gradients(c: &mut Criterion) {
    let data = excerpts(8);
    let batch: Vec<BatchItem> = data
        .iter()
        .enumerate()
        .map(|(i, e)| (soft_mask(e, &MaskSchemeConfig::default(), &mut rng::stream(1, &[i as u64])), e.clone()))
        .collect();
    let params: ModelParams = init_params(&ModelConfig::desk(), &mut rng::stream(2, &[]));
    let mut group = c.benchmark_group("train_step_batch8");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || (params.clone(), AdamState::new(&params, AdamConfig::default())),
                |(mut p, mut opt)| train_step(&batch, &mut p, &mut opt, 1e-3, exec).unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let data = excerpts(16);
    let params: ModelParams = init_params(&ModelConfig::desk(), &mut rng::stream(2, &[]));
    let mut group = c.benchmark_group("evaluate_16");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| evaluate(&data, &params, 3, exec).unwrap()));
    }
    group.finish();
}

fn ingest(c: &mut Criterion) {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/midi"));
    let mut group = c.benchmark_group("prepare_fixtures");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| prepare(dir, 7, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, batch_gradients, evaluation, ingest);
criterion_main!(benches);
