mod common;

use std::path::Path;

use gradecast::dataset::describe_numeric;
use gradecast::error::Error;
use gradecast::pipeline::{
    cmd_describe, cmd_evaluate, cmd_predict, cmd_train, load_dataset, prepare, Manifest, ModelArtifact, PipelineConfig,
    Protocol,
};
use serde_json::Value;

fn config(csv: &Path, out: &Path, extra: &str) -> PipelineConfig {
    let mut c = PipelineConfig::from_json(&format!(
        r#"{{"dataset": {{"path": {:?}, "schema": {}}}, "seed": 5 {extra}}}"#,
        csv.display().to_string(),
        common::TOY_SCHEMA
    ))
    .unwrap();
    c.output_dir = out.to_path_buf();
    c
}

const TREE_ONLY: &str = r#", "models": [{"name": "Decision Tree", "model": {"kind": "decision_tree", "max_depth": 30}}]"#;

#[test]
fn stage_order_follows_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("toy.csv");
    common::write_toy_csv(&csv, 300, 1);
    let mut c = config(&csv, dir.path(), r#", "anomaly": {"enabled": true}, "select": {"k": 4}"#);
    let safe = prepare(&c).unwrap();
    assert_eq!(safe.stages, ["load", "encode", "split", "anomaly_filter", "balance", "select"]);
    c.protocol = Protocol::PaperProtocol;
    let paper = prepare(&c).unwrap();
    assert_eq!(paper.stages, ["load", "encode", "anomaly_filter", "balance", "split", "select"]);
    // each class contributes round(0.2 * count) rows: 172, 86 and 42 rows
    assert_eq!(safe.counts.holdout, 34 + 17 + 8);
    assert_eq!(safe.counts.loaded, 300);
}

#[test]
fn artifacts_round_trip_and_predict_decodes_grades() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("det.csv");
    // grade is a function of material alone, so a deep tree is exact everywhere
    let mut s = String::from("row,material,age,area,height,floors,has_flag,damage_grade\n");
    for i in 0..150 {
        let (m, g) = [("brick", 1), ("mud", 2), ("stone", 3)][i % 3];
        s.push_str(&format!("{i},{m},{},{},{},{},{},{g}\n", (i * 7) % 40, 5 + (i * 3) % 9, 2 + i % 5, 1 + i % 3, i % 2));
    }
    std::fs::write(&csv, s).unwrap();
    let out = dir.path().join("out");
    let c = config(&csv, &out, &format!(r#"{TREE_ONLY}, "select": {{"k": null}}, "resample": {{"enabled": false}}"#));
    let trained = cmd_train(&c).unwrap();

    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest, trained.manifest);
    let entry = &manifest.artifacts[0];
    let path = out.join(&entry.file);
    let artifact = ModelArtifact::load(&path).unwrap();
    assert_eq!(artifact.model, trained.models[0].1);
    assert_eq!(gradecast::pipeline::sha256_hex(&std::fs::read(&path).unwrap()), entry.sha256);

    let pred_path = out.join("pred.csv");
    assert_eq!(cmd_predict(&path, &csv, &pred_path).unwrap(), 150);
    let mut reader = csv::Reader::from_path(&pred_path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["row_id", "damage_grade", "proba_1", "proba_2", "proba_3"]);
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.unwrap();
        assert_eq!(rec[0].parse::<usize>().unwrap(), i);
        assert_eq!(rec[1], (i % 3 + 1).to_string());
        let total: f64 = (2..5).map(|j| rec[j].parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    let report = cmd_evaluate(&c, &[]).unwrap();
    let parsed: Value = serde_json::from_str(&report.json).unwrap();
    assert_eq!(parsed[0]["accuracy"], 1.0);
}

#[test]
fn describe_writes_the_numeric_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("toy.csv");
    common::write_toy_csv(&csv, 120, 2);
    let c = config(&csv, dir.path(), "");
    let files = cmd_describe(&c).unwrap();
    assert_eq!(files.len(), 3);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
    let direct = describe_numeric(&load_dataset(&c).unwrap()).unwrap();
    assert_eq!(written.as_object().unwrap().len(), 4);
    for (name, summary) in direct {
        assert_eq!(written[&name], serde_json::to_value(summary).unwrap(), "{name}");
    }
    let freq = std::fs::read_to_string(&files[1]).unwrap();
    assert!(freq.starts_with("column,n_unique,mode_code,mode_frequency\n"));
}

#[test]
fn missing_input_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let c = config(&dir.path().join("absent.csv"), &out, "");
    for err in [cmd_train(&c).map(|_| ()).unwrap_err(), cmd_describe(&c).map(|_| ()).unwrap_err()] {
        assert_eq!(err.exit_code(), 2, "{err}");
        assert!(matches!(err, Error::Stage { stage: "load", .. }), "{err}");
    }
    assert!(!out.exists());
}

#[test]
fn evaluate_rejects_mismatched_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("toy.csv");
    common::write_toy_csv(&csv, 150, 3);
    let c = config(&csv, &dir.path().join("a"), &format!(r#"{TREE_ONLY}, "select": {{"k": 4}}"#));
    cmd_train(&c).unwrap();
    let path = dir.path().join("a/models/decision_tree.json");
    let mut artifact = ModelArtifact::load(&path).unwrap();
    artifact.schema.target = "other".into();
    let bad = dir.path().join("bad.json");
    artifact.save(&bad).unwrap();
    assert!(matches!(cmd_evaluate(&c, &[bad]), Err(Error::Artifact { .. })));
}
