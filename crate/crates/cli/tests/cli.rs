use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mll::store;

fn mll(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mll"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", stderr(&o));
    o
}

#[test]
fn full_pipeline_beats_the_generalist_on_the_calibration_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(mll(&["synth-gen", "--out", "world", "--seed", "0"], d));
    ok(mll(&["label", "--traces", "world/traces", "--sdag", "world/sdag.json", "--out", "labels"], d));
    ok(mll(
        &["select", "--labels", "labels", "--sdag", "world/sdag.json", "--task", "world/task.json", "--out", "report.json"],
        d,
    ));
    ok(mll(&["predict", "--report", "report.json", "--outputs", "world/outputs.jsonl", "--out", "preds.jsonl"], d));

    let outputs = store::load_outputs(&d.join("world/outputs.jsonl")).unwrap();
    let preds = store::load_predictions(&d.join("preds.jsonl")).unwrap();
    assert!(outputs.warnings.is_empty() && preds.warnings.is_empty());
    let samples = &outputs.value.samples;
    assert_eq!(samples.len(), preds.value.records.len());

    let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b]).then(b.cmp(&a))).unwrap();
    let (mut ours, mut theirs) = (0, 0);
    for (s, p) in samples.iter().zip(&preds.value.records) {
        assert_eq!(s.sample_id, p.sample_id);
        let truth = s.true_class.unwrap();
        ours += usize::from(p.predicted_class == truth);
        theirs += usize::from(argmax(s.generalist.as_ref().unwrap()) == truth);
    }
    assert!(ours >= theirs, "pipeline {ours} vs generalist {theirs} correct");

    let report = store::load_report(&d.join("report.json")).unwrap().value;
    assert!(report.coverage > 0.0);
    assert!(report.ensembles.values().all(|e| e.members.len() <= 2));
}

#[test]
fn empty_label_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("labels")).unwrap();
    fs::write(d.join("task.json"), r#"{"task_id": "t", "class_texts": ["a", "b"]}"#).unwrap();
    fs::write(d.join("g.json"), r#"{"version": 1, "nodes": [{"id": "a", "name": "a"}]}"#).unwrap();
    let o = mll(&["select", "--labels", "labels", "--sdag", "g.json", "--task", "task.json", "--out", "r.json"], d);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no labels found"));
    assert!(!d.join("r.json").exists());
}

#[test]
fn repeated_benchmark_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = r#"{"world": {"num_leaf_classes": 30, "samples_per_node": 10}, "task_classes": 6,
        "num_experts": 6, "expert_classes": [3, 8], "test_samples": 100, "hub_sizes": [0, 3, 6],
        "seeds": [0, 1, 2], "pipeline": {"samples_per_node": 10}}"#;
    fs::write(d.join("cfg.json"), cfg).unwrap();
    ok(mll(&["bench", "--config", "cfg.json", "--out", "a.json", "--seed", "5"], d));
    ok(mll(&["--jobs", "1", "bench", "--config", "cfg.json", "--out", "b.json", "--seed", "5"], d));
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());
    assert_eq!(fs::read(d.join("a.tsv")).unwrap(), fs::read(d.join("b.tsv")).unwrap());
    let r = store::load_benchmark(&d.join("a.json")).unwrap().value;
    assert_eq!(r.seeds, vec![5, 6, 7]);
    assert_eq!(r.steps.len(), 3);
}

#[test]
fn usage_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&mll(&["nonsense"], d.path())), 1);
    assert_eq!(code(&mll(&["synth-gen", "--out", "x"], d.path())), 1);
    assert_eq!(code(&mll(&["bench", "--out", "x.json", "--method", "best"], d.path())), 1);
    assert_eq!(code(&mll(&["--help"], d.path())), 0);
    assert_eq!(code(&mll(&["--version"], d.path())), 0);
}

#[test]
fn graph_build_and_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("defs.json"),
        r#"[{"id": "animal", "name": "animal", "successors": ["dog", "cat"]},
            {"id": "dog", "name": "dog", "description": "a domestic canine"},
            {"id": "cat", "name": "cat"}]"#,
    )
    .unwrap();
    ok(mll(&["sdag-build", "--defs", "defs.json", "--out", "g.json"], d));
    let g = store::load_sdag(&d.join("g.json")).unwrap();
    assert_eq!(g.value.len(), 3);
    assert!(g.warnings.is_empty());

    fs::write(d.join("cyc.json"), r#"[{"id": "a", "name": "a", "successors": ["b"]}, {"id": "b", "name": "b", "successors": ["a"]}]"#)
        .unwrap();
    assert_eq!(code(&mll(&["sdag-build", "--defs", "cyc.json", "--out", "c.json"], d)), 2);

    // a trace for another graph version is refused unless overridden
    fs::write(
        d.join("t.jsonl"),
        "{\"model_id\":\"m\",\"head_count\":2,\"sdag_version\":4}\n{\"node_id\":\"dog\",\"logits\":[1.0,0.0]}\n",
    )
    .unwrap();
    let o = mll(&["label", "--traces", "t.jsonl", "--sdag", "g.json", "--out", "l.json"], d);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    ok(mll(&["label", "--traces", "t.jsonl", "--sdag", "g.json", "--out", "l.json", "--allow-version-mismatch"], d));
    assert!(store::load_label(&d.join("l.json")).is_ok());

    let text = fs::read_to_string(d.join("g.json")).unwrap().replace("canine", "canino");
    fs::write(d.join("g.json"), text).unwrap();
    let o = mll(&["label", "--traces", "t.jsonl", "--sdag", "g.json", "--out", "l2.json", "--allow-version-mismatch"], d);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn chco_debug_writes_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = r#"{"world": {"num_leaf_classes": 20, "samples_per_node": 10}, "task_classes": 4,
        "num_experts": 2, "expert_classes": [6, 10], "test_samples": 10, "hub_sizes": [0, 2],
        "pipeline": {"samples_per_node": 10}}"#;
    fs::write(d.join("cfg.json"), cfg).unwrap();
    ok(mll(&["synth-gen", "--config", "cfg.json", "--out", "w", "--seed", "2"], d));
    ok(mll(&["label", "--traces", "w/traces/model-00.jsonl", "--sdag", "w/sdag.json", "--out", "m0.json"], d));
    ok(mll(
        &["chco-debug", "--labels", "m0.json", "--sdag", "w/sdag.json", "--task", "w/task.json", "--out", "dbg.json", "--lr", "0.1"],
        d,
    ));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(d.join("dbg.json")).unwrap()).unwrap();
    let sweeps = v["sweeps"].as_array().unwrap();
    assert!(!sweeps.is_empty());
    let losses: Vec<f64> = sweeps.iter().map(|s| s["total_loss"].as_f64().unwrap()).collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));
}
