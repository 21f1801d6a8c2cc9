use std::path::Path;
use std::process::{Command, Output};

fn llsh(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llsh"))
        .current_dir(dir)
        .args(args)
        .args(["--quiet", "--run-record", "run.json"])
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn record(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

fn tiny_corpus(dir: &Path) {
    let o = llsh(dir, &["synth", "--preset", "tiny", "--out", "c"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = llsh(dir.path(), &["score", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = llsh(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("synth"));
}

#[test]
fn small_pipeline_prints_both_aucs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_corpus(d);
    assert_eq!(record(d)["command"], "synth");
    let steps: [&[&str]; 3] = [
        &["index", "--train", "c/train.json", "--encoder", "e.bin", "--init-random", "--out", "i.bin"],
        &["score", "--test", "c/test.json", "--encoder", "e.bin", "--index", "i.bin", "--out-dir", "s"],
        &["eval", "--scores-dir", "s", "--labels-dir", "c/labels"],
    ];
    for args in steps {
        let o = llsh(d, args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let out = stdout(&llsh(d, &["eval", "--scores-dir", "s", "--test", "c/test.json"]));
    assert!(out.contains("micro AUC: ") && out.contains("macro AUC: "), "{out}");
    let rec = record(d);
    assert_eq!(rec["command"], "eval");
    assert_eq!(rec["exit_code"], 0);
    assert!(rec["results"]["macro_auc"].as_f64().unwrap() > 0.5);
    assert!(rec["versions"]["llsh"].is_string());
    assert!(rec["settings"]["train"]["learning_rate"].is_number());

    let o = llsh(d, &["stats", "--index", "i.bin", "--encoder", "e.bin"]);
    assert!(stdout(&o).contains("table 0:"), "{}", stdout(&o));
    assert_eq!(record(d)["fingerprints"]["encoder"], record(d)["fingerprints"]["index"]);
}

#[test]
fn fingerprint_mismatch_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_corpus(d);
    llsh(d, &["index", "--train", "c/train.json", "--encoder", "a.bin", "--init-random", "--out", "a.idx"]);
    llsh(d, &["--seed", "5", "index", "--train", "c/train.json", "--encoder", "b.bin", "--init-random", "--out", "b.idx"]);
    let o = llsh(d, &["score", "--test", "c/test.json", "--encoder", "b.bin", "--index", "a.idx", "--out-dir", "s"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fingerprint"), "{}", stderr(&o));
    let rec = record(d);
    assert_eq!(rec["exit_code"], 2);
    assert!(rec["error"].as_str().unwrap().contains("fingerprint"));
}

#[test]
fn truncated_feature_file_names_offset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_corpus(d);
    let f = d.join("c/features/train_000.fvs");
    let bytes = std::fs::read(&f).unwrap();
    std::fs::write(&f, &bytes[..bytes.len() - 3]).unwrap();
    let o = llsh(d, &["index", "--train", "c/train.json", "--encoder", "e.bin", "--init-random", "--out", "i.bin"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("train_000.fvs") && err.contains("byte offset 21"), "{err}");
}

#[test]
fn single_class_labels_are_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir_all(d.join("s")).unwrap();
    std::fs::create_dir_all(d.join("l")).unwrap();
    std::fs::write(d.join("s/v.csv"), "frame_index,score\n0,0.5\n1,0.7\n").unwrap();
    std::fs::write(d.join("l/v.csv"), "frame_index,label\n0,0\n1,0\n").unwrap();
    let o = llsh(d, &["eval", "--scores-dir", "s", "--labels-dir", "l"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn bad_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{"train": {"learning_rat": 1}}"#).unwrap();
    let o = llsh(d, &["--config", "cfg.json", "cost", "--paper-table"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = llsh(d, &["cost", "--method", "kmeans", "--params", "d=3,N=4"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("needs M"), "{}", stderr(&o));
}

#[test]
fn cost_and_theory_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = llsh(d, &["cost", "--method", "knn", "--params", "d=9216,N=792855,M=112422"]);
    assert_eq!(stdout(&o), "821462121768960 multiplications (821.5 Tera)\n");
    let o = llsh(d, &["theory", "curve", "-r", "32", "-b", "8", "--out", "curve.csv"]);
    assert!(stdout(&o).contains("0.9371"), "{}", stdout(&o));
    let csv = std::fs::read_to_string(d.join("curve.csv")).unwrap();
    assert!(csv.starts_with("r,b,s,p\n32,8,0.000000,"));
    assert_eq!(csv.lines().count(), 102);
    let o = llsh(d, &["theory", "mc", "--alpha", "1.5707963267948966", "-r", "1", "-b", "1", "--trials", "2000"]);
    assert!(o.status.success());
    assert!((record(d)["results"]["monte_carlo"]["theoretical"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn train_writes_loss_log_and_respects_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_corpus(d);
    std::fs::write(d.join("cfg.json"), r#"{"train": {"iterations": 5, "batch_size": 8, "queue_len": 32}}"#).unwrap();
    let o = llsh(d, &["--config", "cfg.json", "train", "--train", "c/train.json", "--out", "t.bin", "--loss-log", "loss.csv", "--code-len", "8", "--tables", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(d.join("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(log.starts_with("step,loss\n0,"));
    let rec = record(d);
    assert_eq!(rec["settings"]["train"]["iterations"], 5);
    assert_eq!(rec["results"]["losses"].as_array().unwrap().len(), 5);
    assert_ne!(rec["fingerprints"]["init"], rec["fingerprints"]["encoder"]);
}

#[test]
fn baselines_write_scores() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_corpus(d);
    let o = llsh(d, &["baseline", "knn", "--train", "c/train.json", "--test", "c/test.json", "--out-dir", "k", "-k", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = llsh(d, &["baseline", "kmeans", "--train", "c/train.json", "--test", "c/test.json", "--out-dir", "m", "-k", "4", "--iterations", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for dir_name in ["k", "m"] {
        let o = llsh(d, &["eval", "--scores-dir", dir_name, "--test", "c/test.json", "--protocol", "macro"]);
        assert!(stdout(&o).starts_with("macro AUC: "), "{}", stdout(&o));
    }
    let o = llsh(d, &["baseline", "knn", "--train", "c/train.json", "--test", "c/test.json", "--out-dir", "k", "-k", "100000"]);
    assert_eq!(o.status.code(), Some(1));
}
