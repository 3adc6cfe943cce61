use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gradecast::pipeline::{tuning_setup, PipelineConfig};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gradecast"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

/// Writes a toy CSV and a config beside it; returns the config path.
fn setup(dir: &Path, extra: &str) -> PathBuf {
    let mut csv = String::from("material,age,height,damage_grade\n");
    for i in 0..180 {
        let grade = 1 + i % 3;
        let material = ["brick", "mud", "stone"][(i / 3 + grade) % 3];
        csv.push_str(&format!("{material},{},{},{grade}\n", grade * 10 + (i * 7) % 13, 2 + (i * 5) % 7));
    }
    std::fs::write(dir.join("toy.csv"), csv).unwrap();
    let config = format!(
        r#"{{
  "dataset": {{"path": "toy.csv", "schema": {{
    "columns": [
      {{"name": "material", "kind": "categorical"}},
      {{"name": "age", "kind": "numeric"}},
      {{"name": "height", "kind": "numeric"}}
    ],
    "target": "damage_grade"}}}},
  "select": {{"k": 3}},
  "models": [
    {{"name": "Decision Tree", "model": {{"kind": "decision_tree", "max_depth": 4}}}},
    {{"name": "Logistic Regression", "model": {{"kind": "logistic", "epochs": 20}}}}
  ],
  "output_dir": "out",
  "seed": 3{extra}
}}"#
    );
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_evaluate_report_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let out = dir.path().join("out");
    for cmd in ["describe", "train", "evaluate", "report"] {
        let o = run(&["--config", s(&cfg), cmd]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["numeric_stats.json", "manifest.json", "holdout.json", "report.json", "report.csv", "comparison.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let o = run(&[
        "--out",
        s(&out),
        "predict",
        "--artifact",
        s(&out.join("models/decision_tree.json")),
        "--input",
        s(&dir.path().join("toy.csv")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pred = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(pred.lines().count(), 181);
    assert!(pred.starts_with("row_id,damage_grade,proba_1,proba_2,proba_3\n"));
}

#[test]
fn overrides_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let out = dir.path().join("elsewhere");
    let o = run(&["--config", s(&cfg), "--seed", "99", "--out", s(&out), "--protocol", "paper", "--threads", "1", "train"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 99);
    assert_eq!(m["protocol"], "paper_protocol");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn usage_and_io_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    for args in [
        vec!["--config", s(&missing), "train"],
        vec!["train"],
        vec!["--bogus-flag"],
        vec!["--config", s(&missing), "--protocol", "sideways", "train"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    let o = run(&["--config", s(&missing), "train"]);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));

    // a readable config whose dataset is missing is also an input error
    let cfg = setup(dir.path(), "");
    std::fs::remove_file(dir.path().join("toy.csv")).unwrap();
    assert_eq!(run(&["--config", s(&cfg), "train"]).status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn oversized_selection_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace(r#""k": 3"#, r#""k": 30"#);
    std::fs::write(&cfg, text).unwrap();
    let o = run(&["--config", s(&cfg), "train"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn malformed_artifact_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let bad_artifact = dir.path().join("bad.json");
    std::fs::write(&bad_artifact, "{\"format_version\": 1}").unwrap();
    let o = run(&["--config", s(&cfg), "predict", "--artifact", s(&bad_artifact), "--input", s(&dir.path().join("toy.csv"))]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn tune_matches_library_search() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(
        dir.path(),
        r#", "tuning": {"model": "Decision Tree", "grid": {"max_depth": [1, 2, 4], "min_samples_split": [2, 10]}, "k": 3}"#,
    );
    let o = run(&["--config", s(&cfg), "tune"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let from_cli: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/tune.json")).unwrap()).unwrap();

    let config = PipelineConfig::load(&cfg).unwrap();
    let (ds, spec, t, base) = tuning_setup(&config).unwrap();
    let factory = |p: &serde_json::Map<String, Value>| gradecast::tune::merge_params(&base, p);
    let direct = gradecast::tune::grid_search(&ds, &t.grid, &factory, &spec).unwrap();
    assert_eq!(from_cli, serde_json::to_value(&direct).unwrap());
    assert_eq!(direct.candidates.len(), 6);
}
