//! Black-box checks of the command-line binary: exit codes, error wording,
//! report layout, and byte-stable reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_splitfield")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_config(config: &Path, out: &Path) -> Output {
    Command::new(exe())
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn theorem1_example_passes_and_reruns_identically() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("theorem1_poisson.json");
    let out_a = run_config(&cfg, dir_a.path());
    assert_eq!(code(&out_a), 0, "stderr: {}", stderr(&out_a));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir_a.path().join("theorem1.json")).unwrap())
            .unwrap();
    assert_eq!(json["verdict"], "pass");
    assert_eq!(json["target"].as_f64().unwrap(), 0.5);

    let out_b = run_config(&cfg, dir_b.path());
    assert_eq!(code(&out_b), 0);
    assert_eq!(out_a.stdout, out_b.stdout);
    for name in ["theorem1.json", "theorem1.csv"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn increasing_schedule_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("theorem1_bad_schedule.json");
    let out = run_config(&cfg, dir.path());
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(
        err.contains("strictly decreasing"),
        "stderr does not name the schedule rule: {err}"
    );
}

#[test]
fn verify_split_example_reports_zero_leak() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("verify_split_poisson.json");
    let out = run_config(&cfg, dir.path());
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("verify-split.json")).unwrap())
            .unwrap();
    assert_eq!(json["verdict"], "pass");
    assert_eq!(json["leak_radius"].as_f64().unwrap(), 0.0);
    assert_eq!(json["marginals_ok"], true);
    assert_eq!(json["independence_ok"], true);
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "no_seed.json",
        r#"{"experiment": "sample",
            "model": {"kind": "centered_poisson", "dim": 1, "intensity": 1.0, "mass": 1.0},
            "r": 2.0}"#,
    );
    let out = run_config(&cfg, dir.path());
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(
        err.contains("missing field `seed`"),
        "stderr does not name the missing field: {err}"
    );
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "typo.json",
        r#"{"experiment": "sample", "seed": 1,
            "model": {"kind": "centered_poisson", "dim": 1, "intensity": 1.0, "mass": 1.0},
            "r": 2.0, "tolerence": 0.01}"#,
    );
    let out = run_config(&cfg, dir.path());
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(
        err.contains("unknown field"),
        "stderr does not flag the unknown key: {err}"
    );
}

#[test]
fn schema_output_is_valid_json() {
    let out = Command::new(exe()).arg("schema").output().unwrap();
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).expect("schema parses");
    assert!(doc["config"]["experiment"].is_string());
    assert!(doc["exit_codes"]["0"].is_string());
}

#[test]
fn smoothed_sample_has_empty_atoms_array() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sample_shot.json",
        r#"{"experiment": "sample", "seed": 9,
            "model": {"kind": "shot_noise", "dim": 1, "intensity": 1.0, "mass": 1.0,
                      "kernel": {"pieces": [{"box": [[0.0, 1.0]], "value": 1.0}]}},
            "r": 4.0}"#,
    );
    let out = run_config(&cfg, dir.path());
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let raw = std::fs::read_to_string(dir.path().join("sample.json")).unwrap();
    assert!(
        raw.contains("\"atoms\":[]"),
        "smoothed sample should serialize an empty atoms array, got: {raw}"
    );
    let json: serde_json::Value = serde_json::from_str(&raw).unwrap();
    assert!(json["cells"].as_array().is_some_and(|c| !c.is_empty()));
}

#[test]
fn csv_rows_match_header_width() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cgf_analytic.json",
        r#"{"experiment": "cgf", "seed": 1,
            "model": {"kind": "centered_poisson", "dim": 2, "intensity": 1.0, "mass": 1.0},
            "phi": {"pieces": [{"box": [[0.0, 1.0], [0.0, 1.0]], "value": 1.0}]},
            "mode": "analytic", "r": 8.0, "lambdas": [-0.2, 0.1, 0.3]}"#,
    );
    let out = run_config(&cfg, dir.path());
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("cgf.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, "lambda,value,ci_low,ci_high,n,ess,flag");
    let width = header.split(',').count();
    let mut rows = 0;
    for line in lines {
        assert_eq!(line.split(',').count(), width, "ragged row: {line}");
        rows += 1;
    }
    assert_eq!(rows, 3);
}

#[test]
fn failed_tolerance_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "strict.json",
        r#"{"experiment": "theorem1", "seed": 1,
            "model": {"kind": "centered_poisson", "dim": 1, "intensity": 1.0, "mass": 1.0},
            "phi": {"pieces": [{"box": [[0.0, 1.0]], "value": 1.0}]},
            "mode": "analytic", "tolerance": 1e-9,
            "schedule": [{"r": [40.0], "lambda": 0.2}, {"r": [100.0], "lambda": 0.1}]}"#,
    );
    let out = run_config(&cfg, dir.path());
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("theorem1.json")).unwrap())
            .unwrap();
    assert_eq!(json["verdict"], "fail");
}
