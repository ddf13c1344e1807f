//! Subcommands driven through the built binary.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
master_seed = 3
seeds = 1

[synth]
ad_passages = 30
domain_passages = 30

[peaks]
detectors = ["tb"]
sensitivity_grid = [0.9]
sweep_folds = 2

[embed.vae]
hidden = [8]
latent_dim = 3
epochs = 2

[clf]
n_trials = 2
folds = 2

[clf.base]
n_estimators = 50

[replay]
strategies = ["baseline", "lb"]
memories = [10]
"#;

fn wayside(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wayside")).current_dir(dir).args(args).output().expect("the binary starts")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = wayside(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn batch_to_classifier() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--passages", "12", "--out", "batch"]);
    assert!(d.join("batch/batch.json").exists());

    ok(d, &["peaks", "--input", "batch/passage_0000.csv", "--algo", "sd", "--out", "peaks.json"]);
    let peaks: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("peaks.json")).unwrap()).unwrap();
    assert_eq!(peaks["indices"].as_array().unwrap().len(), peaks["z"].as_u64().unwrap() as usize);

    ok(d, &["embed", "train", "--windows", "batch", "--model", "vae.json", "--epochs", "2"]);
    ok(d, &["embed", "apply", "--windows", "batch", "--model", "vae.json", "--out", "emb.csv"]);
    assert_eq!(std::fs::read_to_string(d.join("emb.csv")).unwrap().lines().count(), 13);

    ok(d, &["clf", "build", "--input", "batch", "--strategy", "S-WD*", "--model", "vae.json", "--out", "ds.csv"]);
    ok(d, &["clf", "tune", "--data", "ds.csv", "--trials", "2", "--folds", "2", "--out", "tune.json"]);
    ok(d, &["clf", "train", "--data", "ds.csv", "--model", "gbdt.json"]);
    let eval: serde_json::Value = serde_json::from_str(&ok(d, &["clf", "eval", "--data", "ds.csv", "--model", "gbdt.json"])).unwrap();
    assert!(eval["accuracy"].as_f64().unwrap() >= 0.5);
}

#[test]
fn noise_free_single_passage_from_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("p.toml"), "train_type = \"alfa\"\nspeed_kmh = 80.0\nload_scheme = \"full\"\nseed = 4\n").unwrap();
    ok(d, &["synth", "--spec", "p.toml", "--noise-free", "--out", "one"]);
    let text = std::fs::read_to_string(d.join("one/batch.json")).unwrap();
    assert!(text.contains("alfa"), "{text}");
}

#[test]
fn run_all_then_report_and_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    ok(d, &["--config", "tiny.toml", "run-all", "--out", "run"]);
    for f in ["manifest.json", "report.md", "ad_grid.csv", "cl_metrics.csv", "results.json", "config.toml"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    ok(d, &["report", "--input", "run", "--out", "again"]);
    assert_eq!(std::fs::read(d.join("run/ad_grid.csv")).unwrap(), std::fs::read(d.join("again/ad_grid.csv")).unwrap());

    let text = ok(
        d,
        &["stats", "friedman", "--input", "run/ad_grid.csv", "--block", "detector,seed", "--treatment", "strategy", "--out", "st"],
    );
    assert!(text.starts_with("analysis,"), "{text}");
    assert!(d.join("st/friedman.csv").exists());

    ok(d, &["--config", "tiny.toml", "cl", "run", "--strategy", "rs,plb", "--memory", "8", "--out", "cl"]);
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("cl/cl_metrics.json")).unwrap()).unwrap();
    assert!(metrics.get("RS/8/0").is_some() && metrics.get("P-LB/8/0").is_some(), "{metrics}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.toml"), "unknown_key = 1\n").unwrap();
    assert_eq!(wayside(d, &["--config", "bad.toml", "run-all"]).status.code(), Some(2));
    assert_eq!(wayside(d, &["--config", "missing.toml", "run-all"]).status.code(), Some(2));
    assert_eq!(wayside(d, &["no-such-command"]).status.code(), Some(2));
    assert_eq!(wayside(d, &["--jobs", "0", "synth"]).status.code(), Some(2));
    assert_eq!(wayside(d, &["synth", "--anomaly-share", "1.5"]).status.code(), Some(2));
    assert_eq!(wayside(d, &["peaks", "--input", "nothing.csv"]).status.code(), Some(3));
    assert_eq!(wayside(d, &["stats", "friedman", "--input", "nothing.csv"]).status.code(), Some(3));
}
