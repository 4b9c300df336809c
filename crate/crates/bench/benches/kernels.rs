use std::hint::black_box;
use std::path::PathBuf;

use attnlab::model::{batch_loss, loss_and_grad};
use attnlab::numerics::{matmul, matmul_nt};
use attnlab::BpeVocab;
use attnlab_bench::{random_matrix, sample_text, ModelInputs};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn matmuls(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64usize, 128, 256] {
        let a = random_matrix(n, n, 1);
        let b = random_matrix(n, n, 2);
        group.throughput(Throughput::Elements((n * n * n) as u64));
        group.bench_with_input(BenchmarkId::new("nn", n), &n, |bench, _| {
            bench.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("nt", n), &n, |bench, _| {
            bench.iter(|| matmul_nt(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    group.sample_size(20);
    for (d, seq) in [(64usize, 32usize), (128, 64)] {
        let inputs = ModelInputs::new(d, 512, seq, 16);
        let batch = inputs.batch();
        let id = format!("d{d}-s{seq}");
        group.bench_function(BenchmarkId::new("forward", &id), |b| {
            b.iter(|| batch_loss(&inputs.frozen, &inputs.params, black_box(&batch)).unwrap())
        });
        group.bench_function(BenchmarkId::new("forward_backward", &id), |b| {
            b.iter(|| loss_and_grad(&inputs.frozen, &inputs.params, black_box(&batch)).unwrap())
        });
    }
    group.finish();
}

fn tokenizer(c: &mut Criterion) {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/bpe");
    let vocab = BpeVocab::from_files(fixtures.join("vocab.json"), fixtures.join("merges.txt"), None)
        .expect("fixture vocabulary");
    let text = sample_text(5_000);
    let mut group = c.benchmark_group("tokenizer");
    group.throughput(Throughput::Bytes(text.len() as u64));
    group.bench_function("encode", |b| b.iter(|| vocab.encode(black_box(&text))));
    let ids = vocab.encode(&text);
    group.bench_function("decode", |b| b.iter(|| vocab.decode(black_box(&ids)).unwrap()));
    group.finish();
}

criterion_group!(benches, matmuls, model, tokenizer);
criterion_main!(benches);
