use std::fs;
use std::process::{Command, Output};

fn ipmdpg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipmdpg"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn unknown_config_field_exits_nonzero_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "kind = \"learn-homotopy\"\n[learner]\nlearning_rat = 0.1\n").unwrap();
    let out = ipmdpg(&["print-config", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:3:"), "{err}");
    assert!(err.contains("learning_rat"), "{err}");
}

#[test]
fn invalid_value_names_the_field() {
    let out = ipmdpg(&["print-config", "--set", "learner.batch_size=2"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("batch_size"), "{err}");
}

#[test]
fn print_config_applies_overrides() {
    let out = ipmdpg(&["print-config", "--set", "learner.learning_rate=0.25"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("learning_rate = 0.25"), "{text}");
}

#[test]
fn run_and_compare_small_learning_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let o = out_dir.to_str().unwrap();
    let out = ipmdpg(&[
        "run",
        "--kind",
        "learn-homotopy",
        "--seeds",
        "3",
        "--out",
        o,
        "--set",
        "learner.steps=4",
        "--set",
        "learner.batch_size=10",
        "--set",
        "eval.rollouts=2",
        "--set",
        "eval.horizon=20",
        "--set",
        "eval.table_points=21",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = out_dir.join("learn-homotopy_3.csv");
    assert!(trace.exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["kind"], "learn-homotopy");
    assert_eq!(manifest["files"][0]["rows"], 4);

    let t = trace.to_str().unwrap();
    let cmp = ipmdpg(&["compare", t, t]);
    assert!(cmp.status.success());
    let v: serde_json::Value = serde_json::from_slice(&cmp.stdout).unwrap();
    assert_eq!(v["max_abs_j_difference"], 0.0);
}

#[test]
fn unknown_kind_is_rejected() {
    let out = ipmdpg(&["run", "--kind", "nope"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dp-baseline"));
}
