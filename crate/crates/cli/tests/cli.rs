use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
    "family": "lqr",
    "lqr": {"count": 24},
    "schedule": {"k": 0.05, "steps": 20},
    "denoiser": {"time_embed_dim": 4, "hidden_dim": 8, "hidden_layers": 1},
    "training": {"epochs": 4, "batch_size": 8},
    "sampler": {"conditions": 2, "samples_per_condition": 2, "traced": 2},
    "eval": {"plots": false}
}"#;

fn dyndiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyndiff"))
        .args(args)
        .env_remove("DYNDIFF_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes the tiny config and returns `[--config, path, --out, dir]`.
fn tiny(dir: &Path) -> Vec<String> {
    let cfg = dir.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    vec![
        "--config".into(),
        cfg.display().to_string(),
        "--out".into(),
        dir.join("out").display().to_string(),
    ]
}

fn run(cmd: &str, common: &[String], extra: &[&str]) -> Output {
    let mut args = vec![cmd];
    args.extend(common.iter().map(String::as_str));
    args.extend(extra);
    dyndiff(&args)
}

#[test]
fn help_succeeds() {
    let out = dyndiff(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("gen-data"));
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(code(&dyndiff(&[])), 1);
    assert_eq!(code(&dyndiff(&["frobnicate"])), 1);
    assert_eq!(code(&dyndiff(&["gen-data", "--family", "quadrotor"])), 1);
    assert_eq!(code(&dyndiff(&["sample", "--algorithm", "alg3"])), 1);
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"training": {"epochz": 3}}"#).unwrap();
    let out = dyndiff(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let common = tiny(dir.path());
    let out = run("train", &common, &[]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("gen-data"));
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ca, cb) = (tiny(a.path()), tiny(b.path()));
    assert_eq!(code(&run("gen-data", &ca, &[])), 0);
    assert_eq!(code(&run("gen-data", &cb, &[])), 0);
    for f in ["dataset/data.bin", "test/data.bin", "experiment/data.bin"] {
        let x = std::fs::read(a.path().join("out").join(f)).unwrap();
        let y = std::fs::read(b.path().join("out").join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
}

#[test]
fn seed_flag_changes_the_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&run("gen-data", &tiny(a.path()), &["--seed", "1"])), 0);
    assert_eq!(code(&run("gen-data", &tiny(b.path()), &["--seed", "2"])), 0);
    let x = std::fs::read(a.path().join("out/dataset/data.bin")).unwrap();
    let y = std::fs::read(b.path().join("out/dataset/data.bin")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn alg2_without_experiment_names_the_missing_data() {
    let dir = tempfile::tempdir().unwrap();
    let common = tiny(dir.path());
    assert_eq!(code(&run("gen-data", &common, &[])), 0);
    assert_eq!(code(&run("train", &common, &[])), 0);
    std::fs::remove_dir_all(dir.path().join("out/experiment")).unwrap();
    let out = run("sample", &common, &["--algorithm", "alg2"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("Gamma"), "{}", stderr(&out));
    assert_eq!(code(&run("sample", &common, &["--algorithm", "alg1"])), 0);
}

#[test]
fn full_pipeline_records_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let common = tiny(dir.path());
    for cmd in ["gen-data", "train", "sample", "eval"] {
        let out = run(cmd, &common, &[]);
        assert_eq!(code(&out), 0, "{cmd}: {}", stderr(&out));
    }
    let out = dir.path().join("out");
    for stage in [
        "dataset",
        "test",
        "experiment",
        "checkpoint",
        "samples/vanilla",
        "samples/alg1",
        "samples/alg2",
        "report",
    ] {
        assert!(out.join(stage).join("resolved_config.json").exists(), "{stage}");
        assert!(out.join(stage).join("inputs.json").exists(), "{stage}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("report/summary.json")).unwrap()).unwrap();
    for alg in ["vanilla", "alg1", "alg2"] {
        assert_eq!(summary["algorithms"][alg]["samples"], 4);
    }
    assert!(summary["algorithms"]["alg1"]["max_rel_residual"].as_f64().unwrap() < 1e-8);
    let resolved: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("checkpoint/resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["training"]["epochs"], 4);
    assert_eq!(resolved["profile"], "desk");
}

#[test]
fn sample_rejects_a_checkpoint_from_other_data() {
    let dir = tempfile::tempdir().unwrap();
    let common = tiny(dir.path());
    assert_eq!(code(&run("gen-data", &common, &[])), 0);
    assert_eq!(code(&run("train", &common, &[])), 0);
    // Regenerating with another seed replaces the training set under the checkpoint.
    assert_eq!(code(&run("gen-data", &common, &["--seed", "99"])), 0);
    let out = run("sample", &common, &["--algorithm", "alg1"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}
