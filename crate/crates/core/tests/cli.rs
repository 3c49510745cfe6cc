mod common;

use common::{crimecast, run_cli_pipeline};

#[test]
fn pipeline_writes_complete_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let metrics: serde_json::Value = serde_json::from_slice(&run_cli_pipeline(dir.path(), 1_000, 2)).unwrap();
    assert_eq!(metrics["model_type"], "rf");
    assert_eq!(metrics["task"], "binary");
    assert_eq!(metrics["feature_set"], "exact");
    assert_eq!(metrics["rows"], 200);
    assert_eq!(metrics["held_out"], true);
    for key in ["accuracy", "auc"] {
        let v = metrics[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert!(metrics["report"]["classes"].is_array());
    for file in ["confusion.csv", "roc.csv", "roc.svg"] {
        assert!(dir.path().join("eval").join(file).is_file(), "{file} missing");
    }
    assert!(dir.path().join("truth.csv").is_file());
    assert!(dir.path().join("table.vocab.json").is_file());
}

#[test]
fn metrics_are_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(
        run_cli_pipeline(a.path(), 1_500, 1),
        run_cli_pipeline(b.path(), 1_500, 8)
    );
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let (code, err) = crimecast(&["train", "--frobnicate"], None);
    assert_eq!(code, 2, "{err}");
    assert_eq!(crimecast(&["--help"], None).0, 0);
}

#[test]
fn truncated_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    run_cli_pipeline(dir.path(), 400, 1);
    let model = dir.path().join("model/model.json");
    let bytes = std::fs::read(&model).unwrap();
    std::fs::write(&model, &bytes[..bytes.len() / 2]).unwrap();
    let table = dir.path().join("table.csv");
    let (code, err) = crimecast(
        &[
            "eval",
            "--model",
            model.to_str().unwrap(),
            "--data",
            table.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code, 1);
    assert!(err.contains("error"), "{err}");
}

#[test]
fn feature_set_mismatch_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    run_cli_pipeline(dir.path(), 400, 1);
    let model = dir.path().join("model/model.json");
    let table = dir.path().join("table.csv");
    let (code, _) = crimecast(
        &[
            "eval",
            "--model",
            model.to_str().unwrap(),
            "--data",
            table.to_str().unwrap(),
            "--features",
            "grid1",
        ],
        None,
    );
    assert_eq!(code, 1);
}

#[test]
fn predict_writes_one_row_per_record() {
    let dir = tempfile::tempdir().unwrap();
    run_cli_pipeline(dir.path(), 300, 1);
    let out = dir.path().join("pred.csv");
    let (code, err) = crimecast(
        &[
            "predict",
            "--model",
            dir.path().join("model/model.json").to_str().unwrap(),
            "--data",
            dir.path().join("table.csv").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("row,prediction,p_0,p_1"));
    assert_eq!(lines.count(), 300);
}
