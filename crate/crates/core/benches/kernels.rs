//! Sequential vs parallel timings for the data-parallel kernels.
//! Build with `--no-default-features` to confirm the parallel arm falls
//! back to the sequential path.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use histkit_core::corpus::kmeans_cluster_with;
use histkit_core::embedstore::{knn_with, EmbeddingMatrix, EmbeddingProvider, StubProvider};
use histkit_core::evalsuite::{bitext_accuracy_with, build_bitext_task_with, BitextTask, TaskOptions};
use histkit_core::translate::{SentencePair, TargetLang};
use histkit_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn matrix(n: usize, dim: usize, prefix: &str) -> EmbeddingMatrix {
    let stub = StubProvider::new(prefix, dim);
    let texts: Vec<String> = (0..n).map(|i| format!("{prefix} {i}")).collect();
    let rows = stub.embed_batch(&texts).unwrap();
    EmbeddingMatrix::from_rows((0..n).map(|i| format!("s{i}")).collect(), &rows).unwrap()
}

fn bench_knn(c: &mut Criterion) {
    let mut g = c.benchmark_group("knn");
    let m = matrix(50_000, 256, "corpus");
    let q = m.row(17).to_vec();
    let none = HashSet::new();
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, "50k x 256, k=10"), &exec, |b, &exec| {
            b.iter(|| knn_with(black_box(&q), &m, 10, &none, exec))
        });
    }
    g.finish();
}

fn bench_bitext(c: &mut Criterion) {
    let mut g = c.benchmark_group("bitext_accuracy");
    g.sample_size(10);
    let n = 2_000;
    let src = matrix(n, 128, "src");
    let tgt = matrix(n, 128, "tgt");
    let ids: Vec<String> = src.ids().to_vec();
    let gold = ids.iter().map(|i| (i.clone(), i.clone())).collect();
    let task = BitextTask::new(ids.clone(), ids, gold, BTreeMap::<String, BTreeSet<String>>::new(), 0.85).unwrap();
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, n), &exec, |b, &exec| {
            b.iter(|| bitext_accuracy_with(&task, &src, &tgt, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_build_task(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_bitext_task");
    g.sample_size(10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<SentencePair> = (0..1_500)
        .map(|i| {
            let len = rng.random_range(20..80);
            let text: String = (0..len).map(|_| rng.random_range(b'a'..=b'h') as char).collect();
            SentencePair {
                article_id: format!("a{}", i / 10),
                index: i % 10,
                source_text: text.clone(),
                target_text: text,
                target_lang: TargetLang::De,
            }
        })
        .collect();
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, pairs.len()), &exec, |b, &exec| {
            b.iter(|| build_bitext_task_with(&pairs, TaskOptions::default(), exec).unwrap())
        });
    }
    g.finish();
}

fn bench_kmeans(c: &mut Criterion) {
    let mut g = c.benchmark_group("kmeans");
    g.sample_size(10);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vectors: Vec<Vec<f64>> = (0..20_000)
        .map(|_| (0..32).map(|_| rng.random::<f64>()).collect())
        .collect();
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, "20k x 32, k=20"), &exec, |b, &exec| {
            b.iter(|| kmeans_cluster_with(&vectors, 20, 0, 10, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_knn, bench_bitext, bench_build_task, bench_kmeans);
criterion_main!(benches);
