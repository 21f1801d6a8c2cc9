use std::collections::HashMap;

use llsh_core::scoring::Metric;
use llsh_core::{
    macro_auc, BinaryKey, Dataset, EncoderConfig, FingerprintCheck, HashEncoder, HashIndex,
    LabeledVideo, QueryConfig, Scorer, SynthConfig, Variant,
};

fn tiny() -> SynthConfig {
    SynthConfig::preset("tiny").unwrap()
}

fn encoder(d: usize, seed: u64) -> HashEncoder {
    HashEncoder::init_random(EncoderConfig::new(d, 6, 3).with_seed(seed)).unwrap()
}

#[test]
fn light_index_matches_recomputed_means() {
    let (train, test) = llsh_core::data::synthesize(&tiny()).unwrap();
    let enc = encoder(train.dim().unwrap(), 3);
    let feats = train.all_features();
    let index = HashIndex::build(&enc, &feats, Variant::Light).unwrap();

    let r = enc.config().code_len;
    for j in 0..enc.config().num_tables {
        let mut groups: HashMap<BinaryKey, (u64, Vec<f64>)> = HashMap::new();
        for x in &feats {
            let h = enc.forward_layer(j, x).unwrap();
            let e = groups.entry(h.binarize()).or_insert((0, vec![0.0; r]));
            e.0 += 1;
            for (s, &v) in e.1.iter_mut().zip(h.values()) {
                *s += v as f64;
            }
        }
        assert_eq!(index.tables()[j].len(), groups.len());
        for (key, (count, sum)) in &groups {
            let b = index.lookup(j, key).unwrap();
            assert_eq!(b.count(), *count);
            for (&m, s) in b.payload().iter().zip(sum) {
                assert!((m as f64 - s / *count as f64).abs() < 1e-6);
            }
        }
    }

    let scorer = Scorer::new(&index, &enc, QueryConfig::default()).unwrap();
    let sentinel = (r as f64).sqrt();
    for y in test.all_features().iter().take(200) {
        let mut want = f64::INFINITY;
        for j in 0..enc.config().num_tables {
            let h = enc.forward_layer(j, y).unwrap();
            let d = match index.lookup(j, &h.binarize()) {
                Some(b) => Metric::Euclidean.distance(h.values(), b.payload()),
                None => sentinel,
            };
            want = want.min(d);
        }
        assert_eq!(scorer.score(y).unwrap(), want);
    }
}

#[test]
fn lightened_full_index_equals_direct_light_build() {
    let (train, _) = llsh_core::data::synthesize(&tiny()).unwrap();
    let enc = encoder(train.dim().unwrap(), 4);
    let feats = train.all_features();
    let full = HashIndex::build(&enc, &feats, Variant::Full).unwrap();
    let light = HashIndex::build(&enc, &feats, Variant::Light).unwrap();
    let derived = full.lighten().unwrap();
    assert_eq!(derived.variant(), Variant::Light);
    assert_eq!(derived.total(), light.total());
    for j in 0..light.num_tables() {
        for (key, b) in light.tables()[j].iter() {
            let o = derived.lookup(j, key).unwrap();
            assert_eq!(o.count(), b.count());
            for (x, y) in o.payload().iter().zip(b.payload()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn files_on_disk_reproduce_scores() {
    let dir = tempfile::tempdir().unwrap();
    let out = llsh_core::data::generate_synthetic(&tiny(), dir.path()).unwrap();
    let train = Dataset::load(&out.train_manifest).unwrap();
    let test = Dataset::load(&out.test_manifest).unwrap();
    let (mem_train, mem_test) = llsh_core::data::synthesize(&tiny()).unwrap();
    assert_eq!(train, mem_train);
    assert_eq!(test, mem_test);

    let enc = encoder(train.dim().unwrap(), 5);
    let index = HashIndex::build(&enc, &train.all_features(), Variant::Full).unwrap();
    enc.save(dir.path().join("e.bin")).unwrap();
    index.save(dir.path().join("i.bin")).unwrap();
    let enc2 = HashEncoder::load(dir.path().join("e.bin")).unwrap();
    let index2 =
        HashIndex::load(dir.path().join("i.bin"), FingerprintCheck::Strict(enc2.fingerprint())).unwrap();
    assert_eq!(index2, index);

    let runs = |enc: &HashEncoder, index: &HashIndex| -> Vec<LabeledVideo> {
        let scorer = Scorer::new(index, enc, QueryConfig::default()).unwrap();
        test.videos
            .iter()
            .map(|v| {
                let s = scorer
                    .score_video(&v.id, v.features.features(), &v.spans().unwrap(), v.frame_count as usize)
                    .unwrap();
                LabeledVideo::new(v.id.clone(), s.scores, v.labels.clone().unwrap()).unwrap()
            })
            .collect()
    };
    let a = runs(&enc, &index);
    let b = runs(&enc2, &index2);
    assert_eq!(a, b);
    let auc = macro_auc(&a).unwrap();
    assert!(auc > 0.6, "macro AUC {auc}");

    let other = encoder(train.dim().unwrap(), 6);
    assert!(HashIndex::load(dir.path().join("i.bin"), FingerprintCheck::Strict(other.fingerprint())).is_err());
    assert!(HashIndex::load(dir.path().join("i.bin"), FingerprintCheck::Warn(other.fingerprint())).is_ok());
}
