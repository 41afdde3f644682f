mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/evaluate").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(common::bin()).args(args).output().expect("binary runs")
}

fn jsonl(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).expect("json line")).collect()
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    jsonl(&std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
}

fn error_record(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no error record in {stderr}"));
    serde_json::from_str(line).unwrap()
}

fn boxes(v: &Value) -> Vec<[u32; 4]> {
    v.as_array()
        .map(|a| a.iter().map(|b| serde_json::from_value(b.clone()).unwrap()).collect())
        .unwrap_or_default()
}

/// Expected evaluation output computed with the exhaustive-pairing oracle,
/// reading the inputs as plain JSON.
fn oracle_evaluation() -> (Vec<Value>, Vec<Value>) {
    let annotations = read_jsonl(&fixture("annotations.jsonl"));
    let predictions = read_jsonl(&fixture("predictions.jsonl"));
    let mut records = Vec::new();
    let mut correct = 0;
    for a in &annotations {
        let pred = predictions
            .iter()
            .find(|p| p["query_id"] == a["query_id"] && p["page_id"] == a["page_id"])
            .map(|p| boxes(&p["boxes"]))
            .unwrap_or_default();
        let gt = boxes(&a["gt_boxes"]);
        let positive = a["label"] == "positive";
        if positive == !pred.is_empty() {
            correct += 1;
        }
        let mut r = json!({
            "query_id": a["query_id"],
            "page_id": a["page_id"],
            "label": a["label"],
            "predicted_relevant": !pred.is_empty(),
            "thres_em": 0.6,
            "thres_min": 0.8,
        });
        if !gt.is_empty() {
            let o = common::oracle_report(&gt, &pred);
            r["recall_min"] = json!(o.recall_min);
            r["recall_em"] = json!(o.recall_em);
            r["precision_min"] = json!(o.precision_min);
            r["f1_min"] = json!(o.f1_min);
        }
        records.push(r);
    }
    let scored = annotations.iter().filter(|a| !boxes(&a["gt_boxes"]).is_empty()).count();
    let summary = json!({
        "units": annotations.len(),
        "scored_units": scored,
        "page_accuracy": correct as f64 / annotations.len() as f64,
    });
    (records, vec![summary])
}

fn to_jsonl(rows: &[Value]) -> String {
    rows.iter().map(|r| r.to_string() + "\n").collect()
}

#[test]
#[ignore = "rewrites the golden files"]
fn regenerate_evaluate_golden() {
    let (records, summary) = oracle_evaluation();
    std::fs::write(fixture("expected_evaluation.jsonl"), to_jsonl(&records)).unwrap();
    std::fs::write(fixture("expected_summary.jsonl"), to_jsonl(&summary)).unwrap();
}

#[test]
fn golden_agrees_with_oracle() {
    let (records, summary) = oracle_evaluation();
    assert_eq!(read_jsonl(&fixture("expected_evaluation.jsonl")), records);
    assert_eq!(read_jsonl(&fixture("expected_summary.jsonl")), summary);
}

#[test]
fn evaluate_matches_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "evaluate",
        "--annotations",
        fixture("annotations.jsonl").to_str().unwrap(),
        "--predictions",
        fixture("predictions.jsonl").to_str().unwrap(),
        "--output-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_jsonl(&tmp.path().join("evaluation.jsonl")), read_jsonl(&fixture("expected_evaluation.jsonl")));
    assert_eq!(
        read_jsonl(&tmp.path().join("evaluation_summary.jsonl")),
        read_jsonl(&fixture("expected_summary.jsonl"))
    );
}

#[test]
fn evaluate_without_output_dir_prints_records() {
    let out = run(&[
        "evaluate",
        "--annotations",
        fixture("annotations.jsonl").to_str().unwrap(),
        "--predictions",
        fixture("predictions.jsonl").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let printed = jsonl(&String::from_utf8(out.stdout).unwrap());
    assert!(printed.len() >= 10);
    assert_eq!(printed[..10], read_jsonl(&fixture("expected_evaluation.jsonl"))[..]);
}

#[test]
fn reward_on_empty_input_is_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let rollouts = tmp.path().join("rollouts.jsonl");
    std::fs::write(&rollouts, "").unwrap();
    let out = run(&["reward", "--rollouts", rollouts.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
}

#[test]
fn unreachable_model_fails_with_a_record() {
    let tmp = tempfile::tempdir().unwrap();
    let files = common::write_corpus(tmp.path());
    let config = files.root.join("offline.toml");
    std::fs::write(
        &config,
        r#"[endpoints.model]
url = "http://127.0.0.1:9/v1/chat/completions"
model = "m"
timeout_secs = 2.0

[paths]
queries = "queries.jsonl"
retrieval = "retrieval.jsonl"
pages = "pages"

[fixtures]
mock_backend = "backend.json"
"#,
    )
    .unwrap();
    let out_dir = files.root.join("out");
    let out = run(&[
        "extract",
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"], "ModelUnavailable");
}

#[test]
fn config_errors_point_at_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, "[pipeline]\ntop_k = 5\nfan_out = \"many\"\n").unwrap();
    let out = run(&["evaluate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_record(&out);
    assert_eq!(err["error"], "ConfigInvalid");
    assert_eq!(err["line"], 3);
    assert_eq!(err["file"], config.to_str().unwrap());

    std::fs::write(&config, "[paths]\nannotations = \"missing.jsonl\"\n").unwrap();
    let out = run(&["evaluate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["line"], 2);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let files = common::write_corpus(tmp.path());
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "pipeline",
        "--config",
        files.config.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--input-config",
        "page",
        "--fan-out",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_jsonl(&out_dir.join("run_report.jsonl"));
    assert_eq!(report.len(), common::QUERY_COUNT);
    assert!(report.iter().all(|r| r.to_string().contains("\"page\"")), "{report:?}");
}

#[test]
fn malformed_input_line_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let rollouts = tmp.path().join("rollouts.jsonl");
    std::fs::write(&rollouts, "{}\nnot json\n").unwrap();
    let out = run(&["reward", "--rollouts", rollouts.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_record(&out);
    assert_eq!(err["file"], rollouts.to_str().unwrap());
    assert!(err["line"].is_number(), "{err}");
}
