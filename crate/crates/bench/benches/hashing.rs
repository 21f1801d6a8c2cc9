use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use llsh_core::baselines::knn_score;
use llsh_core::scoring::Metric;
use llsh_core::{roc_auc, EncoderConfig, HashEncoder, HashIndex, QueryConfig, Scorer, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: usize = 256;

fn features(n: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..D).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn encoder(r: usize, b: usize) -> HashEncoder {
    HashEncoder::init_random(EncoderConfig::new(D, r, b).with_seed(1)).unwrap()
}

fn encode(c: &mut Criterion) {
    let x = features(1, 0).pop().unwrap();
    let mut g = c.benchmark_group("encode");
    for (r, b) in [(16, 8), (32, 8)] {
        let enc = encoder(r, b);
        g.bench_with_input(BenchmarkId::from_parameter(format!("r{r}_b{b}")), &x, |bench, x| {
            bench.iter(|| enc.encode_layers(x).unwrap())
        });
    }
    g.finish();
}

fn build(c: &mut Criterion) {
    let train = features(4000, 1);
    let enc = encoder(16, 8);
    let mut g = c.benchmark_group("index_build");
    g.throughput(Throughput::Elements(train.len() as u64));
    g.sample_size(20);
    for variant in [Variant::Full, Variant::Light] {
        g.bench_function(variant.to_string(), |bench| {
            bench.iter(|| HashIndex::build(&enc, &train, variant).unwrap())
        });
    }
    g.finish();
}

fn query(c: &mut Criterion) {
    let train = features(4000, 2);
    let test = features(200, 3);
    let enc = encoder(16, 8);
    let mut g = c.benchmark_group("score");
    g.throughput(Throughput::Elements(test.len() as u64));
    for variant in [Variant::Full, Variant::Light] {
        let index = HashIndex::build(&enc, &train, variant).unwrap();
        let scorer = Scorer::new(&index, &enc, QueryConfig::default()).unwrap();
        g.bench_function(variant.to_string(), |bench| {
            bench.iter(|| test.iter().map(|y| scorer.score(y).unwrap()).sum::<f64>())
        });
    }
    g.bench_function("knn_k5", |bench| {
        bench.iter(|| test.iter().map(|y| knn_score(&train, y, 5, Metric::Euclidean).unwrap()).sum::<f64>())
    });
    g.finish();
}

fn auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..1000) as f64) / 10.0).collect();
    let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.2) as u8).collect();
    c.bench_function("roc_auc_100k_tied", |bench| bench.iter(|| roc_auc(&scores, &labels).unwrap()));
}

criterion_group!(benches, encode, build, query, auc);
criterion_main!(benches);
