//! CLI surface: exit codes, artifacts, error records.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> PathBuf {
    let mut p = PathBuf::from(env!("CARGO_BIN_EXE_hoigen"));
    assert!(p.exists(), "binary missing at {}", p.display());
    p = p.canonicalize().unwrap();
    p
}

fn tmp(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("hoigen_cli_{tag}"));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn generate_without_checkpoint_exits_3_naming_the_path() {
    let dir = tmp("gen_missing");
    let out = Command::new(bin())
        .args(["generate", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("iamg.ckpt") || stderr.contains("checkpoint"),
        "stderr should name the missing checkpoint: {stderr}"
    );
    // Machine-readable error record with the exit code.
    let record = std::fs::read_to_string(dir.join("error.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&record).unwrap();
    assert_eq!(v["exit_code"], 3);
    assert_eq!(v["command"], "generate");
}

#[test]
fn invalid_config_exits_2() {
    let dir = tmp("bad_cfg");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "seed = \"not a number\"\n").unwrap();
    let out = Command::new(bin())
        .args(["synth-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_reports_prints_ordering_lines() {
    let dir = tmp("compare");
    let mk = |kl: f64, idh: f64| {
        format!(
            r#"{{"identity_human": {idh}, "identity_object": {idh}, "identity_pair": {idh},
                "holistic_accuracy": {idh}, "kl_distance": {kl}, "box_compliance": 0.9,
                "sample_count": 10, "rules_hash": "x"}}"#
        )
    };
    let ours = dir.join("ours.json");
    let base = dir.join("baseline.json");
    std::fs::write(&ours, mk(0.1, 0.9)).unwrap();
    std::fs::write(&base, mk(1.0, 0.2)).unwrap();
    let out = Command::new(bin())
        .args(["compare-reports"])
        .arg(&ours)
        .arg(&base)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("[pass]").count(), 5, "{stdout}");

    // Reversed direction fails with exit 1.
    let out = Command::new(bin())
        .args(["compare-reports"])
        .arg(&base)
        .arg(&ours)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_documents_flags_and_env() {
    let out = Command::new(bin()).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["--config", "--seed", "--out", "HOIGEN_OUT_ROOT"] {
        assert!(text.contains(needle), "--help missing {needle}: {text}");
    }
    let out = Command::new(bin()).args(["generate", "--help"]).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["--bg", "--box", "--category", "--count"] {
        assert!(text.contains(needle), "generate --help missing {needle}");
    }
}
