use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn skdv(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_skdv"));
    cmd.args(args);
    match workers {
        Some(w) => cmd.env("SKDV_WORKERS", w),
        None => cmd.env_remove("SKDV_WORKERS"),
    };
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    let text = format!(
        "output_dir = {:?}\n{body}",
        dir.join("runs").display().to_string()
    );
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_error(out: &Output) -> Value {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"].clone()
}

const COS: &str = r#"
[[experiment]]
kind = "simulate"
n_max = 16
dt = 0.001
window = 0.02
initial = { type = "cosine" }
tolerance = 1e-12
"#;

#[test]
fn simulate_writes_reports() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "cos.toml", COS);
    let v = stdout_json(&skdv(&["simulate", &cfg], Some("1")));
    assert_eq!(v["cells"][0]["status"], "ok");
    let dir = Path::new(v["dir"].as_str().unwrap());
    for f in [
        "manifest.json",
        "config.json",
        "000-simulate/summary.json",
        "000-simulate/conservation.csv",
    ] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let echo: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    assert!(echo["conventions"]["rng"]
        .as_str()
        .unwrap()
        .contains("ChaCha8"));
}

#[test]
fn compare_of_a_report_with_itself_is_zero() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "cos.toml", COS);
    let v = stdout_json(&skdv(&["run", &cfg], None));
    let summary = Path::new(v["dir"].as_str().unwrap()).join("000-simulate/summary.json");
    let s = summary.display().to_string();
    let diff = stdout_json(&skdv(&["compare", &s, &s], None));
    assert_eq!(diff["flagged"], 0);
    assert!(diff["scalars"]
        .as_array()
        .unwrap()
        .iter()
        .all(|x| x["relative"] == 0.0));
}

#[test]
fn unknown_key_fails_with_a_field_path() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "bad.toml", &COS.replace("window", "windw"));
    let out = skdv(&["simulate", &cfg], None);
    assert_eq!(out.status.code(), Some(2));
    let e = stderr_error(&out);
    assert_eq!(e["code"], "invalid_config");
    assert!(e["message"].as_str().unwrap().contains("windw"));
}

#[test]
fn subcommand_rejects_other_kinds() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "cos.toml", COS);
    let e = stderr_error(&skdv(&["norm", &cfg], None));
    assert_eq!(e["code"], "invalid_config");
    assert!(e["message"]
        .as_str()
        .unwrap()
        .contains("experiment[0].kind"));
}

#[test]
fn bad_worker_count_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "cos.toml", COS);
    let e = stderr_error(&skdv(&["run", &cfg], Some("zero")));
    assert_eq!(e["code"], "invalid_environment");
}

#[test]
fn runtime_failure_exits_nonzero_with_reason() {
    let d = tempfile::tempdir().unwrap();
    let body = r#"
[[experiment]]
kind = "simulate"
n_max = 8
dt = 0.01
window = 0.04
initial = { type = "cosine", amplitude = 1e6 }
max_sweeps = 3
"#;
    let cfg = write_config(d.path(), "blowup.toml", body);
    let out = skdv(&["simulate", &cfg], None);
    assert_eq!(out.status.code(), Some(1));
    let e = stderr_error(&out);
    assert_eq!(e["code"], "cell_failed");
    let m = e["message"].as_str().unwrap();
    assert!(
        m.contains("no_contraction") || m.contains("window_underflow"),
        "{m}"
    );
}

#[test]
fn verify_estimates_and_reseeded_compare() {
    let d = tempfile::tempdir().unwrap();
    let body = |seed: u64| {
        format!(
            r#"
[[experiment]]
kind = "norm"
n_max = 32
field = {{ type = "white-noise" }}
norms = [{{ s = -0.45, p = 2.5, q = "inf" }}]
seed = {seed}
"#
        )
    };
    let a = stdout_json(&skdv(
        &["norm", &write_config(d.path(), "a.toml", &body(1))],
        None,
    ));
    let b = stdout_json(&skdv(
        &["norm", &write_config(d.path(), "b.toml", &body(2))],
        None,
    ));
    let path = |v: &Value| {
        Path::new(v["dir"].as_str().unwrap())
            .join("000-norm/summary.json")
            .display()
            .to_string()
    };
    let diff = stdout_json(&skdv(&["compare", &path(&a), &path(&b)], None));
    assert_eq!(diff["config_changes"], serde_json::json!(["seed"]));

    let est = r#"
[[experiment]]
kind = "verify-estimates"
estimates = [
  { name = "resonance", bound = 16 },
  { name = "near-curve", n_max = 16 },
]
"#;
    let v = stdout_json(&skdv(
        &["verify-estimates", &write_config(d.path(), "est.toml", est)],
        None,
    ));
    let dir = Path::new(v["dir"].as_str().unwrap()).join("000-verify-estimates");
    let rep: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(rep["scalars"]["0-resonance.passed"], 1.0);
    assert!(dir.join("plots/1-near-curve.csv").exists());

    let mismatch = stderr_error(&skdv(
        &[
            "compare",
            &path(&a),
            &dir.join("summary.json").display().to_string(),
        ],
        None,
    ));
    assert_eq!(mismatch["code"], "report_mismatch");
}
