use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn hsg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsg"))
        .args(args)
        .current_dir(dir)
        .env_remove("HSG_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn error_json(o: &Output) -> Value {
    let line = String::from_utf8_lossy(&o.stderr)
        .lines()
        .last()
        .expect("stderr has an error line")
        .to_string();
    serde_json::from_str(&line).expect("error is JSON")
}

const TINY: &str = r#"{
  "corpus": {"n_train": 8, "n_val": 3, "n_test": 3, "objects_per_scene": 3,
             "feature_dim": 16, "captions_per_scene": 2},
  "model": {"family": "updown", "embed_dim": 8, "hidden_dim": 8},
  "teacher": {"epochs": 2, "lr": 0.3},
  "student": {"epochs": 2, "mle_warmup_epochs": 1, "state_net_epochs": 2,
              "t_max": 8, "beam_width": 2}
}"#;

fn write_config(dir: &Path) {
    std::fs::write(dir.join("run.json"), TINY).unwrap();
}

#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d);
    let start = Instant::now();
    let o = hsg(&["gen-corpus", "--config", "run.json"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["train"], 8);
    assert!(d.join("corpus/train.jsonl").exists());
    assert!(d.join("corpus/manifest_gen-corpus.json").exists());

    let o = hsg(&["train-teacher", "--config", "run.json"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["epochs"], 2);
    let progress: Vec<Value> = String::from_utf8_lossy(&o.stderr)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(progress.len(), 2);

    for mode in ["mle_hsg", "scst_hsg"] {
        let set = format!("student.mode={mode}");
        let o = hsg(&["train-student", "--config", "run.json", "--set", &set], d);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let out = stdout_json(&o);
        assert_eq!(out["history"].as_array().unwrap().len(), 2);
        let history = std::fs::read_to_string(d.join("run/history.jsonl")).unwrap();
        for line in history.lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            for k in ["epoch", "split", "bleu4", "rouge_l", "cider", "mean_state_loss"] {
                assert!(v.get(k).is_some(), "{k} missing in {line}");
            }
            assert_eq!(v["split"], "val");
        }
    }

    let o = hsg(&["evaluate", "--config", "run.json", "--checkpoint", "run/student.json", "--split", "test"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = stdout_json(&o);
    for k in ["bleu4", "rouge_l", "cider"] {
        assert!(m[k].as_f64().unwrap().is_finite());
    }
    assert!(start.elapsed().as_secs() < 300);
}

#[test]
fn zero_epoch_checkpoint_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d);
    let zero = [
        "--set",
        "teacher.epochs=0",
        "--set",
        "student.epochs=0",
        "--set",
        "student.state_net_epochs=0",
    ];
    for cmd in ["gen-corpus", "train-teacher", "train-student"] {
        let mut args = vec![cmd, "--config", "run.json"];
        args.extend(zero);
        let o = hsg(&args, d);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = hsg(&["evaluate", "--config", "run.json", "--checkpoint", "run/student.json", "--split", "val"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = stdout_json(&o);
    assert!(["bleu4", "rouge_l", "cider"].iter().all(|k| m[k].as_f64().unwrap().is_finite()));
}

#[test]
fn errors_are_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = hsg(&["train-teacher", "--config", "missing.json"], d);
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"]["kind"], "file");

    std::fs::write(d.join("bad.json"), r#"{"student": {"lamda": 1}}"#).unwrap();
    let o = hsg(&["gen-corpus", "--config", "bad.json"], d);
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"]["kind"], "config");

    let o = hsg(&["gen-corpus", "--set", "student.lambda=-1"], d);
    assert_eq!(error_json(&o)["error"]["kind"], "config");

    let o = hsg(&["train-teacher"], d);
    assert_eq!(error_json(&o)["error"]["kind"], "file");

    let o = hsg(&["frobnicate"], d);
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"]["kind"], "usage");
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d);
    for cmd in ["gen-corpus", "train-teacher"] {
        assert!(hsg(&[cmd, "--config", "run.json"], d).status.success());
    }
    let o = hsg(&["gen-corpus", "--config", "run.json", "--set", "corpus.seed=5", "--set", "corpus_dir=other"], d);
    assert!(o.status.success());
    let o = hsg(
        &[
            "train-student",
            "--config",
            "run.json",
            "--set",
            "corpus.seed=5",
            "--set",
            "corpus_dir=other",
        ],
        d,
    );
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"]["kind"], "checkpoint");
}

#[test]
fn seed_env_var_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d);
    assert!(hsg(&["gen-corpus", "--config", "run.json"], d).status.success());
    let teacher = |seed: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_hsg"))
            .args(["train-teacher", "--config", "run.json"])
            .current_dir(d)
            .env("HSG_SEED", seed)
            .output()
            .unwrap();
        assert!(o.status.success());
        let ck: Value = serde_json::from_slice(&std::fs::read(d.join("run/teacher.json")).unwrap()).unwrap();
        ck["config"]["teacher"]["seed"].clone()
    };
    assert_eq!(teacher("17"), 17);
    assert_eq!(teacher("3"), 3);
    let o = Command::new(env!("CARGO_BIN_EXE_hsg"))
        .args(["train-teacher", "--config", "run.json"])
        .current_dir(d)
        .env("HSG_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(error_json(&o)["error"]["kind"], "config");
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = hsg(&["grad-check", "--seeds", "2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_json(&o);
    assert_eq!(r["failed"], 0);
    assert!(r["checks"].as_u64().unwrap() > 30);
}

#[test]
fn enum_check_reports_every_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let o = hsg(&["enum-check"], dir.path());
    let r = stdout_json(&o);
    let checks = r["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 2);
    let mut hsg_ok = true;
    for c in checks {
        assert_eq!(c["scst"]["n_captions"], 40);
        assert!(c["scst"]["max_abs_diff"].as_f64().unwrap() <= 1e-8);
        assert!(c["hsg_fixed_encoder"]["max_abs_diff"].as_f64().unwrap() <= 1e-8);
        hsg_ok &= c["hsg"]["max_abs_diff"].as_f64().unwrap() <= 1e-8;
    }
    // exit status follows the guided estimator with the self-encoded teacher
    assert_eq!(o.status.success(), hsg_ok);
    if !hsg_ok {
        assert_eq!(error_json(&o)["error"]["kind"], "check_failed");
    }
}
