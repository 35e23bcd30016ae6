//! End-to-end tests of the `ldsb` binary: file outputs, determinism and
//! exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn ldsb(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldsb"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.json");
    std::fs::write(
        &path,
        r#"{
  "master_seed": 11,
  "regime": "rich",
  "hidden": 24,
  "dataset": { "kind": "ifm", "d": 8, "gamma": 1.5, "n_train": 128, "n_val": 64,
               "n_test": 64, "num_nonlinear": 4, "num_noise": 3 },
  "train": { "steps": 250, "batch_size": 64, "peak_lr": 0.5, "momentum": 0.9,
             "weight_decay": 0.0, "warmup_frac": 0.05, "seed": 0,
             "eval_every": 100, "track_effrank": true }
}"#,
    )
    .unwrap();
    path
}

#[test]
fn gen_writes_dataset_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_config(dir.path());
    let out = ldsb(&["gen", "--config", "tiny.json", "--out", "a"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["train.csv", "val.csv", "test.csv", "dataset.json"] {
        assert!(dir.path().join("a").join(name).exists(), "missing {name}");
    }
    let header = std::fs::read_to_string(dir.path().join("a/train.csv")).unwrap();
    assert!(header.starts_with("# ldsb-dataset v1 d=8 L=2 linear_coord=0"));

    let out = ldsb(&["gen", "--config", "tiny.json", "--out", "b"], dir.path());
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("a/train.csv")).unwrap(),
        std::fs::read(dir.path().join("b/train.csv")).unwrap()
    );
}

#[test]
fn train_same_seed_gives_byte_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_config(dir.path());
    assert!(ldsb(&["gen", "--config", "tiny.json", "--out", "data"], dir.path())
        .status
        .success());
    for run in ["r1", "r2"] {
        let out = ldsb(
            &["train", "--data", "data/train.csv", "--config", "tiny.json", "--out", run],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        std::fs::read(dir.path().join("r1/checkpoint.json")).unwrap(),
        std::fs::read(dir.path().join("r2/checkpoint.json")).unwrap()
    );
    // Log has the pinned CSV header.
    let log = std::fs::read_to_string(dir.path().join("r1/trainlog.csv")).unwrap();
    assert!(log.starts_with("step,train_loss,train_acc,val_acc,effrank_W,lr"));
}

#[test]
fn analyze_emits_pinned_report_keys() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_config(dir.path());
    assert!(ldsb(&["gen", "--config", "tiny.json", "--out", "data"], dir.path())
        .status
        .success());
    assert!(ldsb(
        &["train", "--data", "data/train.csv", "--config", "tiny.json", "--out", "run"],
        dir.path()
    )
    .status
    .success());
    let out = ldsb(
        &[
            "analyze",
            "--data",
            "data/test.csv",
            "--model",
            "run/checkpoint.json",
            "--config",
            "tiny.json",
            "--rank",
            "1",
            "--out",
            "an",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("an/sbreport.json")).unwrap())
            .unwrap();
    for key in ["rank_P", "acc", "pperp_ra", "p_ra", "pperp_lc", "p_lc", "effrank_W"] {
        assert!(report.get(key).is_some(), "missing key {key}");
    }
    assert_eq!(report["rank_P"], 1);
    // Percentages live in [0, 200] territory; raw values in [0, ~2].
    assert!(report["acc"].as_f64().unwrap() > 1.0);
    assert!(report["raw"]["acc"].as_f64().unwrap() <= 1.0);
    assert!(dir.path().join("an/boundary.csv").exists());
    assert!(dir.path().join("an/decay.csv").exists());
}

#[test]
fn ntk_report_threshold_signs() {
    let dir = tempfile::tempdir().unwrap();
    let out = ldsb(&["ntk", "--d", "100000", "--gamma", "7", "--out", "n"], dir.path());
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("n/ntk.json")).unwrap())
            .unwrap();
    assert!(report["neg_values"]["at_0.73"].as_f64().unwrap() > 0.0);
    assert!(report["neg_values"]["at_0"].as_f64().unwrap() < 0.0);
    assert!(report["support_vector_residual_max"].as_f64().unwrap() < 1e-7);
}

#[test]
fn pipeline_produces_full_reproducible_bundle() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_config(dir.path());
    let out = ldsb(&["pipeline", "--config", "tiny.json", "--out", "p1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "train.csv",
        "val.csv",
        "test.csv",
        "f.json",
        "f_trainlog.csv",
        "sbreport.json",
        "decay.csv",
        "boundary.csv",
        "projector.json",
        "fproj.json",
        "fproj_trainlog.csv",
        "find.json",
        "find_trainlog.csv",
        "diversity.json",
        "robustness.csv",
        "manifest.json",
    ] {
        assert!(dir.path().join("p1").join(name).exists(), "missing {name}");
    }
    // Rerun with the same seed: all numeric outputs identical.
    assert!(ldsb(&["pipeline", "--config", "tiny.json", "--out", "p2"], dir.path())
        .status
        .success());
    for name in ["f.json", "sbreport.json", "robustness.csv", "diversity.json", "manifest.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("p1").join(name)).unwrap(),
            std::fs::read(dir.path().join("p2").join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
    // Different seed: manifest hash changes.
    assert!(ldsb(
        &["pipeline", "--config", "tiny.json", "--seed", "12", "--out", "p3"],
        dir.path()
    )
    .status
    .success());
    let hash = |p: &str| {
        let m: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(p).join("manifest.json")).unwrap(),
        )
        .unwrap();
        m["config_hash"].as_str().unwrap().to_owned()
    };
    assert_eq!(hash("p1"), hash("p2"));
    assert_ne!(hash("p1"), hash("p3"));
    // Inputs were not mutated by any stage.
    let gen_only = ldsb(&["gen", "--config", "tiny.json", "--out", "fresh"], dir.path());
    assert!(gen_only.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("p1/train.csv")).unwrap(),
        std::fs::read(dir.path().join("fresh/train.csv")).unwrap()
    );
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown flag: usage error, exit 1.
    let out = ldsb(&["gen", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    // Unknown preset: validation, exit 1.
    let out = ldsb(&["gen", "--preset", "nope", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    // Config with unknown keys: validation, exit 1.
    std::fs::write(dir.path().join("bad.json"), "{\"master_seed\":1,\"zzz\":2}").unwrap();
    let out = ldsb(&["gen", "--config", "bad.json", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    // Missing input file: runtime, exit 2.
    let out = ldsb(&["train", "--data", "missing.csv", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    // Help exits 0.
    let out = ldsb(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

/// Full collage preset end to end; ignored by default because it is the
/// five-minute desk-scale run. `cargo test -p ldsb-cli -- --ignored`.
#[test]
#[ignore]
fn full_collage_pipeline_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let out = ldsb(
        &["pipeline", "--preset", "collage-xor", "--seed", "5", "--out", "full"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs() < 300, "took {:?}", start.elapsed());
    assert!(dir.path().join("full/manifest.json").exists());
}
