//! End-to-end acceptance checks. Each test prints one `[PASS]`/`[FAIL]` line.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use llsh_core::baselines::{knn_score, paper_table};
use llsh_core::data::{synthesize, Dataset, SynthConfig};
use llsh_core::evaluation::{macro_auc, micro_auc, roc_auc, LabeledVideo};
use llsh_core::scoring::finish_series;
use llsh_core::theory::{angle_from_similarity, monte_carlo_collision, similarity_threshold, steepest_similarity};
use llsh_core::training::{
    loss_and_grad, loss_only, mean_positive_similarity, momentum_update, train, CodeQueue, HashParams, Trainer,
};
use llsh_core::{
    EncoderConfig, HashEncoder, HashIndex, Metric, PairSampler, PairSource, QueryConfig, Scorer, TrainConfig, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Runs `body`, prints the verdict line directly to stderr (bypassing capture), and
/// fails the test on error or panic.
fn criterion(id: &str, title: &str, body: impl FnOnce() -> Result<String, String>) {
    let outcome = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let line = format!("[{tag}] {id} {title}: {detail}\n");
    std::io::stderr().lock().write_all(line.as_bytes()).unwrap();
    if let Err(e) = outcome {
        panic!("{id} failed: {e}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn llsh() -> Command {
    Command::new(env!("CARGO_BIN_EXE_llsh"))
}

#[test]
fn c01_cost_table() {
    criterion("C1", "cost table reproduction", || {
        let start = Instant::now();
        let out = llsh()
            .args(["cost", "--paper-table", "--quiet", "--run-record"])
            .arg(std::env::temp_dir().join("llsh-acceptance-c1.json"))
            .output()
            .map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        ensure(out.status.success(), || format!("exit {:?}", out.status))?;
        let text = String::from_utf8_lossy(&out.stdout);
        let expected = [
            ("KNN ", "821.5 Tera"),
            ("K=1024, t=300", "2245.8 Tera"),
            ("K=32, t=300", "70.2 Tera"),
            ("LSH ", "2.1 Tera"),
            ("LLSH ", "5.5 Giga more"),
            ("light-LLSH", "0.8 Giga less"),
        ];
        for (row, value) in expected {
            ensure(
                text.lines().any(|l| l.contains(row) && l.contains(value)),
                || format!("missing {value:?} on row {row:?} in:\n{text}"),
            )?;
        }
        ensure(paper_table().map_err(|e| e.to_string())?.len() == 6, || "six rows".into())?;
        within(elapsed, Duration::from_secs(1))?;
        Ok(format!("all six magnitudes printed in {elapsed:.2?}"))
    });
}

#[test]
fn c02_collision_law() {
    criterion("C2", "collision probability law", || {
        let start = Instant::now();
        let s = 0.878;
        let cases = [
            (std::f64::consts::FRAC_PI_4, 1, 1, 0.01),
            (std::f64::consts::FRAC_PI_2, 1, 1, 0.01),
            (angle_from_similarity(s), 16, 8, 0.02),
        ];
        let mut notes = Vec::new();
        for (i, &(alpha, r, b, tol)) in cases.iter().enumerate() {
            let res = monte_carlo_collision(alpha, r, b, 64, 100_000, 1000 + i as u64).map_err(|e| e.to_string())?;
            let gap = (res.empirical - res.theoretical).abs();
            ensure(gap <= tol, || {
                format!("alpha={alpha:.4} r={r} b={b}: empirical {} vs theory {} (gap {gap:.4} > {tol})", res.empirical, res.theoretical)
            })?;
            notes.push(format!("{:.4}/{:.4}", res.empirical, res.theoretical));
        }
        let p = llsh_core::theory::multi_table_prob(angle_from_similarity(s), 16, 8).unwrap();
        ensure((p - 0.6554).abs() < 1e-3, || format!("theory at s=0.878 is {p}"))?;
        within(start.elapsed(), Duration::from_secs(30))?;
        Ok(format!("empirical/theory {} in {:.1?}", notes.join(", "), start.elapsed()))
    });
}

#[test]
fn c03_threshold() {
    criterion("C3", "similarity threshold", || {
        let mut notes = Vec::new();
        for (r, b, want) in [(16, 8, 0.8781), (32, 8, 0.9371)] {
            let t = similarity_threshold(r, b).unwrap();
            ensure((t - want).abs() <= 1e-4, || format!("threshold({r},{b}) = {t}, want {want}"))?;
            let steep = steepest_similarity(r, b, 10_001).unwrap();
            ensure((steep - t).abs() <= 0.05, || format!("steepest({r},{b}) = {steep} vs {t}"))?;
            notes.push(format!("({r},{b}) threshold {t:.4} steepest {steep:.4}"));
        }
        Ok(notes.join("; "))
    });
}

#[test]
fn c04_gradient_exactness() {
    criterion("C4", "gradient exactness", || {
        let start = Instant::now();
        let (d, r, b, l, tau) = (16, 4, 2, 8, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst: f64 = 0.0;
        for trial in 0..10 {
            let config = EncoderConfig::new(d, r, b).with_seed(trial);
            let weights: Vec<f64> = (0..d * r * b).map(|_| rng.random_range(-1.0..1.0)).collect();
            let params = HashParams::new(config, weights).unwrap();
            let x: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let unit = |rng: &mut ChaCha8Rng| {
                let v: Vec<f64> = (0..r * b).map(|_| rng.random_range(0.0..1.0)).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                v.into_iter().map(|a| a / n).collect::<Vec<_>>()
            };
            let z_pos = unit(&mut rng);
            let mut queue = CodeQueue::new(l);
            for _ in 0..l {
                queue.push(unit(&mut rng));
            }
            let (_, grad) = loss_and_grad(&params, &x, &z_pos, &queue, tau).unwrap();
            let h = 1e-4;
            for (i, &g) in grad.iter().enumerate() {
                let mut plus = params.clone();
                plus.weights_mut()[i] += h;
                let mut minus = params.clone();
                minus.weights_mut()[i] -= h;
                let numeric = (loss_only(&plus, &x, &z_pos, &queue, tau).unwrap()
                    - loss_only(&minus, &x, &z_pos, &queue, tau).unwrap())
                    / (2.0 * h);
                let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
        within(start.elapsed(), Duration::from_secs(5))?;
        Ok(format!("max relative error {worst:.2e} over 10 instances"))
    });
}

#[test]
fn c05_momentum() {
    criterion("C5", "momentum update", || {
        let config = EncoderConfig::new(8, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draw = || HashParams::new(config, (0..64).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        for m in [0.0, 0.5, 0.999] {
            let (key0, query) = (draw(), draw());
            let mut key = key0.clone();
            momentum_update(&mut key, &query, m).unwrap();
            for ((k, k0), q) in key.weights().iter().zip(key0.weights()).zip(query.weights()) {
                ensure(*k == m * k0 + (1.0 - m) * q, || format!("m={m}: {k} != {}", m * k0 + (1.0 - m) * q))?;
            }
            if m == 0.0 {
                ensure(key.weights() == query.weights(), || "m=0 must copy".into())?;
            }
        }

        let (train_ds, _) = synthesize(&SynthConfig::preset("tiny").unwrap()).unwrap();
        let sampler = PairSampler::new(PairSource::Temporal {
            videos: train_ds.timed_sequences().unwrap(),
            max_offset: 150,
        })
        .unwrap();
        let init = HashEncoder::init_random(EncoderConfig::new(16, 8, 2).with_seed(1)).unwrap();
        let cfg = TrainConfig {
            momentum: 0.9,
            learning_rate: 50.0,
            batch_size: 16,
            queue_len: 64,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&init, cfg).unwrap();
        let mut replay = HashParams::from_encoder(&init).weights().to_vec();
        for _ in 0..20 {
            trainer.step(&sampler).unwrap();
            for (k, q) in replay.iter_mut().zip(trainer.query().weights()) {
                *k = cfg.momentum * *k + (1.0 - cfg.momentum) * q;
            }
        }
        let moved = trainer
            .key()
            .weights()
            .iter()
            .zip(HashParams::from_encoder(&init).weights())
            .any(|(a, b)| a != b);
        ensure(moved, || "key encoder never moved".into())?;
        let worst = replay
            .iter()
            .zip(trainer.key().weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(worst <= 1e-6, || format!("replay deviates by {worst:e}"))?;
        Ok(format!("exact for m in {{0, 0.5, 0.999}}; 20-step replay max deviation {worst:.1e}"))
    });
}

/// Anomaly score by rescanning every training code: bucket membership is decided by
/// comparing binarized codes directly, without the index.
fn brute_force_score(train_codes: &[Vec<Vec<f32>>], encoder: &HashEncoder, y: &[f32]) -> f64 {
    let r = encoder.config().code_len;
    let hy = encoder.encode_layers(y).unwrap();
    let mut best = f64::INFINITY;
    for (j, h) in hy.iter().enumerate() {
        let key: Vec<bool> = h.values().iter().map(|&v| v >= 0.5).collect();
        let mut sum = 0.0;
        let mut n = 0usize;
        for codes in train_codes {
            let c = &codes[j];
            if c.iter().map(|&v| v >= 0.5).eq(key.iter().copied()) {
                sum += c
                    .iter()
                    .zip(h.values())
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                n += 1;
            }
        }
        let dist = if n == 0 { (r as f64).sqrt() } else { sum / n as f64 };
        best = best.min(dist);
    }
    best
}

#[test]
fn c06_query_oracle() {
    criterion("C6", "query-oracle equivalence", || {
        let cfg = SynthConfig {
            train_count: 5000,
            train_videos: 10,
            videos: 20,
            frames_per_video: 816,
            seed: 6,
            ..SynthConfig::default()
        };
        let (train_ds, test_ds) = synthesize(&cfg).unwrap();
        let train_x = train_ds.all_features();
        let queries = test_ds.all_features();
        ensure(train_x.len() == 5000 && queries.len() == 1000, || {
            format!("N={} M={}", train_x.len(), queries.len())
        })?;
        let encoder = HashEncoder::init_random(EncoderConfig::new(64, 16, 8).with_seed(6)).unwrap();
        let full = HashIndex::build(&encoder, &train_x, Variant::Full).unwrap();
        let light = full.lighten().unwrap();
        let sf = Scorer::new(&full, &encoder, QueryConfig::default()).unwrap();
        let sl = Scorer::new(&light, &encoder, QueryConfig::default()).unwrap();
        let train_codes: Vec<Vec<Vec<f32>>> = train_x
            .par_iter()
            .map(|x| encoder.encode_layers(x).unwrap().into_iter().map(|h| h.into_vec()).collect())
            .collect();
        let worst = queries
            .par_iter()
            .map(|y| (sf.score(y).unwrap() - brute_force_score(&train_codes, &encoder, y)).abs())
            .reduce(|| 0.0, f64::max);
        ensure(worst <= 1e-5, || format!("max |index - oracle| = {worst:e}"))?;

        let mut singleton_checks = 0;
        for y in &queries {
            let codes = encoder.encode_layers(y).unwrap();
            for (j, h) in codes.iter().enumerate() {
                if full.lookup(j, &h.binarize()).is_some_and(|b| b.count() == 1) {
                    let (a, b) = (sf.bucket_distance(j, h).unwrap(), sl.bucket_distance(j, h).unwrap());
                    ensure(a == b, || format!("singleton bucket: full {a} vs light {b}"))?;
                    singleton_checks += 1;
                }
            }
        }
        ensure(singleton_checks > 0, || "no singleton buckets were probed".into())?;
        Ok(format!(
            "1000 queries, max deviation {worst:.1e}; {singleton_checks} singleton-bucket probes identical"
        ))
    });
}

fn macro_for(test: &Dataset, score: &(dyn Fn(&[f32]) -> f64 + Sync)) -> f64 {
    let run: Vec<LabeledVideo> = test
        .videos
        .iter()
        .map(|v| {
            let raw: Vec<f64> = v.features.features().par_iter().map(|x| score(x)).collect();
            let s = finish_series(&raw, &v.spans().unwrap(), v.frame_count as usize, &QueryConfig::default()).unwrap();
            LabeledVideo::new(&v.id, s, v.labels.clone().unwrap()).unwrap()
        })
        .collect();
    macro_auc(&run).unwrap()
}

fn hashing_macro(encoder: &HashEncoder, train_x: &[&[f32]], test: &Dataset) -> f64 {
    let index = HashIndex::build(encoder, train_x, Variant::Full).unwrap();
    let scorer = Scorer::new(&index, encoder, QueryConfig::default()).unwrap();
    macro_for(test, &|y| scorer.score(y).unwrap())
}

#[test]
fn c07_desk_scale_detection() {
    criterion("C7", "desk-scale detection", || {
        let start = Instant::now();
        let seed = 0;
        let (train_ds, test) = synthesize(&SynthConfig::default()).unwrap();
        let train_x = train_ds.all_features();
        let knn = macro_for(&test, &|y| knn_score(&train_x, y, 5, Metric::Euclidean).unwrap());
        ensure(knn >= 0.95, || format!("KNN macro-AUC {knn}"))?;

        let init = HashEncoder::init_random(EncoderConfig::new(64, 16, 8).with_seed(seed)).unwrap();
        let lsh = hashing_macro(&init, &train_x, &test);
        ensure(lsh >= 0.90, || format!("LSH macro-AUC {lsh}"))?;

        let sampler = PairSampler::new(PairSource::Temporal {
            videos: train_ds.timed_sequences().unwrap(),
            max_offset: 150,
        })
        .unwrap();
        let trained = train(&init, &sampler, TrainConfig { seed, ..TrainConfig::desk() }).unwrap();
        let llsh = hashing_macro(&trained.encoder, &train_x, &test);
        ensure(llsh >= lsh, || format!("LLSH macro-AUC {llsh} < LSH {lsh}"))?;

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pairs: Vec<_> = (0..2000).map(|_| sampler.sample_pair(&mut rng)).collect();
        let before = mean_positive_similarity(&init, &pairs).unwrap();
        let after = mean_positive_similarity(&trained.encoder, &pairs).unwrap();
        ensure(after > before, || format!("positive similarity {before} -> {after}"))?;
        within(start.elapsed(), Duration::from_secs(120))?;
        Ok(format!(
            "macro-AUC KNN {knn:.4}, LSH {lsh:.4}, LLSH {llsh:.4}; positive similarity {before:.4} -> {after:.4}; {:.1?}",
            start.elapsed()
        ))
    });
}

fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in (0..scores.len()).filter(|&i| labels[i] == 1) {
        for j in (0..scores.len()).filter(|&j| labels[j] == 0) {
            pairs += 1.0;
            wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    wins / pairs
}

#[test]
fn c08_auc_correctness() {
    criterion("C8", "AUC correctness", || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let n = rng.random_range(2..=200);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[n - 1] = 1;
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64 * 0.25).collect();
            let auc = roc_auc(&scores, &labels).unwrap();
            worst = worst.max((auc - pairwise_auc(&scores, &labels)).abs());

            let run = [LabeledVideo::new("v", scores.clone(), labels.clone()).unwrap()];
            ensure(micro_auc(&run).unwrap() == macro_auc(&run).unwrap(), || "micro != macro on one video".into())?;
            let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            ensure(roc_auc(&mapped, &labels).unwrap() == auc, || "not invariant to monotone map".into())?;
        }
        ensure(worst <= 1e-12, || format!("max deviation from pairwise oracle {worst:e}"))?;
        Ok(format!("50 tied instances, max deviation {worst:.1e}; micro=macro; monotone invariant"))
    });
}

#[test]
fn c09_serialization() {
    criterion("C9", "serialization round trip", || {
        let dir = tempfile::tempdir().unwrap();
        let (train_ds, test) = synthesize(&SynthConfig::preset("tiny").unwrap()).unwrap();
        let train_x = train_ds.all_features();
        let encoder = HashEncoder::init_random(EncoderConfig::new(16, 8, 4).with_seed(9)).unwrap();
        let enc_path = dir.path().join("e.bin");
        encoder.save(&enc_path).unwrap();
        let enc2 = HashEncoder::load(&enc_path).unwrap();
        ensure(enc2.to_bytes() == std::fs::read(&enc_path).unwrap(), || "encoder bytes differ".into())?;
        let queries = test.all_features();
        for variant in [Variant::Full, Variant::Light] {
            let index = HashIndex::build(&encoder, &train_x, variant).unwrap();
            let p = dir.path().join(format!("{variant}.idx"));
            index.save(&p).unwrap();
            let loaded =
                HashIndex::load(&p, llsh_core::FingerprintCheck::Strict(enc2.fingerprint())).unwrap();
            ensure(loaded.to_bytes() == std::fs::read(&p).unwrap(), || format!("{variant} index bytes differ"))?;
            let before = Scorer::new(&index, &encoder, QueryConfig::default()).unwrap();
            let after = Scorer::new(&loaded, &enc2, QueryConfig::default()).unwrap();
            for y in &queries {
                let (a, b) = (before.score(y).unwrap(), after.score(y).unwrap());
                ensure(a.to_bits() == b.to_bits(), || format!("{variant}: score {a} became {b}"))?;
            }
        }
        Ok(format!("encoder, full and light index byte-identical; {} scores bit-identical", 2 * queries.len()))
    });
}

fn pipeline(dir: &Path, workers: usize) -> (String, String, String) {
    let run = |args: &[&str]| {
        let out = llsh()
            .current_dir(dir)
            .args(args)
            .args(["--seed", "10", "--quiet", "--workers", &workers.to_string(), "--run-record", "run.json"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    run(&["synth", "--out", "corpus"]);
    run(&["index", "--train", "corpus/train.json", "--encoder", "lsh.enc", "--init-random", "--out", "lsh.idx"]);
    run(&["score", "--test", "corpus/test.json", "--encoder", "lsh.enc", "--index", "lsh.idx", "--out-dir", "lsh"]);
    let lsh = run(&["eval", "--scores-dir", "lsh", "--test", "corpus/test.json"]);
    let record: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
    let lsh_exact = format!("{} {}", record["results"]["micro_auc"], record["results"]["macro_auc"]);
    run(&["train", "--train", "corpus/train.json", "--init", "lsh.enc", "--out", "llsh.enc", "--loss-log", "loss.csv"]);
    run(&["index", "--train", "corpus/train.json", "--encoder", "llsh.enc", "--out", "llsh.idx"]);
    run(&["score", "--test", "corpus/test.json", "--encoder", "llsh.enc", "--index", "llsh.idx", "--out-dir", "llsh"]);
    run(&["eval", "--scores-dir", "llsh", "--test", "corpus/test.json"]);
    let record: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
    let aucs = format!(
        "{lsh_exact} {} {}",
        record["results"]["micro_auc"], record["results"]["macro_auc"]
    );
    (aucs, std::fs::read_to_string(dir.join("loss.csv")).unwrap(), lsh)
}

#[test]
fn c10_determinism() {
    criterion("C10", "determinism across worker counts", || {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (auc1, loss1, printed) = pipeline(a.path(), 1);
        let (auc4, loss4, _) = pipeline(b.path(), 4);
        ensure(auc1 == auc4, || format!("AUCs differ: {auc1} vs {auc4}"))?;
        ensure(loss1 == loss4, || "loss logs differ".into())?;
        ensure(loss1.lines().count() > 1, || "empty loss log".into())?;
        ensure(printed.contains("micro AUC") && printed.contains("macro AUC"), || printed.clone())?;
        Ok(format!("1 vs 4 workers: identical AUCs ({auc1}) and {}-step loss logs", loss1.lines().count() - 1))
    });
}
