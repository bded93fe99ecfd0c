use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfg_equilibrium::runner::RunManifest;

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json")
}

fn mfgeq(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mfgeq"));
    cmd.args(args).env_remove("OUTPUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn passing_stage_exits_zero_and_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = smoke();
    let o = mfgeq(&["riccati", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m.stages.len(), 1);
    assert!(m.stages[0].passed);
    assert_eq!(m.wall_clock_seconds, None);
    assert_eq!(m.files.iter().filter(|f| *f == "manifest.json").count(), 1);
    for f in ["config.json", "manifest.json", "riccati.csv", "riccati.json"] {
        assert!(m.files.iter().any(|x| x == f), "{f} missing from {:?}", m.files);
        assert!(out.join(f).exists());
    }
}

#[test]
fn failing_criterion_exits_one_and_records_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = smoke();
    let o = mfgeq(
        &[
            "riccati",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "eqg.riccati_tolerance=0",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    let m = manifest(&out);
    assert!(!m.stages[0].passed);
    assert_eq!(m.seed, 11);
    let keys: Vec<&str> = m.overrides.iter().map(|o| o.key.as_str()).collect();
    assert_eq!(keys, ["eqg.riccati_tolerance", "seed"]);
    assert_eq!(m.overrides[0].previous, serde_json::json!(1e-8));
}

#[test]
fn configuration_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    let out = out.to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["riccati", "--config", cfg, "--set", "eqg.no_such_key=1", "--out", out],
        vec!["riccati", "--config", cfg, "--set", "eqg.factor.a=0.5", "--out", out],
        vec!["riccati", "--config", "/nonexistent/config.json", "--out", out],
        vec!["frobnicate", "--config", cfg],
        vec!["riccati", "--config", cfg, "--threads", "0", "--out", out],
    ];
    for args in cases {
        let o = mfgeq(&args, &[]);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!Path::new(out).join("manifest.json").exists());
}

#[test]
fn output_dir_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let env_dir = tmp.path().join("from_env");
    let flag_dir = tmp.path().join("from_flag");
    let cfg = smoke();
    let o = mfgeq(&["riccati", "--config", cfg.to_str().unwrap()], &[("OUTPUT_DIR", &env_dir)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(env_dir.join("manifest.json").exists());
    let o = mfgeq(
        &["riccati", "--config", cfg.to_str().unwrap(), "--out", flag_dir.to_str().unwrap()],
        &[("OUTPUT_DIR", &env_dir.join("unused"))],
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(flag_dir.join("manifest.json").exists());
    assert!(!env_dir.join("unused").exists());
}

#[test]
fn timing_is_recorded_only_on_request() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = smoke();
    let o = mfgeq(&["riccati", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--record-timing"], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(manifest(&out).wall_clock_seconds.is_some());
}
