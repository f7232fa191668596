use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sitetransfer"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "{:?} failed:\n{}", args, String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], dir: &Path) -> Output {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(!out.status.success(), "{:?} unexpectedly succeeded", args);
    out
}

const SMALL: &[&str] = &["--conv-layers", "2", "--filters", "8", "--lstm-layers", "1", "--hidden", "16"];

#[test]
fn full_pipeline_on_synthetic_data() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = ok(&["ingest", "--dataset", "synthetic", "--out", "data.stwa", "--seed", "3", "--split"], d);
    assert!(out.contains("1000 windows written"));
    for part in ["train_source", "adapt", "test"] {
        assert!(d.join(format!("data.{}.stwa", part)).is_file());
    }

    let mut train = vec!["train-source", "--archive", "data.train_source.stwa", "--out", "source.ckpt", "--epochs", "2", "--report", "train.json"];
    train.extend_from_slice(SMALL);
    ok(&train, d);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("train.json")).unwrap()).unwrap();
    assert_eq!(report["history"]["epochs_run"], 2);

    ok(
        &["adapt", "--model", "source.ckpt", "--archive", "data.adapt.stwa", "--out", "target.ckpt", "--epochs", "2", "--loss", "cosine", "--reg", "l1"],
        d,
    );
    ok(&["baseline", "--method", "lpft", "--model", "source.ckpt", "--archive", "data.adapt.stwa", "--out", "lpft.ckpt", "--epochs", "1", "--fraction", "0.33"], d);

    // JSON to stdout by default; the target model scores target windows
    let json = ok(&["evaluate", "--model", "target.ckpt", "--archive", "data.test.stwa"], d);
    let metrics: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(metrics["windows"], 200);
    ok(&["evaluate", "--model", "source.ckpt", "--archive", "data.test.stwa", "--site", "target", "--weighted", "--out-dir", "eval"], d);
    for file in ["metrics.json", "per_class.csv", "confusion.csv", "roc.csv"] {
        assert!(d.join("eval").join(file).is_file(), "{}", file);
    }

    ok(&["export-embeddings", "--model", "target.ckpt", "--archive", "data.test.stwa", "--out", "emb.csv"], d);
    let text = std::fs::read_to_string(d.join("emb.csv")).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert!(text.lines().nth(1).unwrap().split(',').nth(1) == Some("target"));
}

#[test]
fn experiment_run_and_summarize() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let config = "version = 1
kind = \"size_sweep\"
seed = 9
repetitions = 2
fractions = [0.5, 1.0]
save_checkpoints = false
output_dir = \"results\"

[dataset]
kind = \"synthetic\"
[dataset.config]
windows_per_class = 10

[architecture]
conv_layers = 1
conv_filters = 4
kernel = 5
lstm_layers = 1
lstm_hidden = 8

[source_training]
max_epochs = 1
[adaptation]
max_epochs = 1
";
    std::fs::write(d.join("sweep.toml"), config).unwrap();
    let table = ok(&["experiment", "run", "sweep.toml", "--workers", "1"], d);
    assert!(table.contains("M_T on D_ST @ 0.5"));
    let results = d.join("results");
    let before = std::fs::read(results.join("summary.csv")).unwrap();
    let again = ok(&["experiment", "summarize", "results"], d);
    assert_eq!(std::fs::read(results.join("summary.csv")).unwrap(), before);
    assert!(table.starts_with(&again));

    // a different config may not write into the same directory
    std::fs::write(d.join("other.toml"), config.replace("seed = 9", "seed = 10")).unwrap();
    let out = fails(&["experiment", "run", "other.toml", "--out", "results"], d);
    assert!(String::from_utf8_lossy(&out.stderr).contains("refusing to overwrite"));
}

#[test]
fn helpful_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = fails(&["evaluate", "--model", "missing.ckpt", "--archive", "missing.stwa"], d);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));
    let out = bin()
        .args(["ingest", "--dataset", "mhealth", "--out", "x.stwa"])
        .env_remove("SITETRANSFER_DATA")
        .current_dir(d)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SITETRANSFER_DATA"));
    fails(&["ingest", "--dataset", "nope", "--out", "x.stwa", "--raw-dir", "."], d);
    std::fs::write(d.join("bad.toml"), "version = 1\nkind = \"three_way\"\n").unwrap();
    fails(&["experiment", "run", "bad.toml", "--out", "r"], d);
}
