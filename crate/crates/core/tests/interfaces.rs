//! Files written by other tools: logit traces from an extractor and
//! embedding tables from a text encoder.

use mll::labelling::{aggregate_label, mean_logits, AggregationMode, DEFAULT_DISCOUNT};
use mll::sdag::{match_classes, MatchConfig, SDag, SemanticNode, TableEmbedder, TaskSpec};
use mll::store::{self, StoreError};
use sha2::{Digest, Sha256};

fn graph() -> SDag {
    SDag::build(vec![
        SemanticNode::new("animal", "animal").with_successors(["dog", "cat"]),
        SemanticNode::new("dog", "dog"),
        SemanticNode::new("cat", "cat"),
    ])
    .unwrap()
}

/// Body lines plus the integrity footer, spaced the way a hand-rolled writer might.
fn with_footer(lines: &[String]) -> Vec<u8> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    let sum = hex::encode(Sha256::digest(out.as_bytes()));
    out.push_str(&format!("{{\"records\": {}, \"checksum\": \"{sum}\"}}\n", lines.len() - 1));
    out.into_bytes()
}

fn extractor_trace(version: u64) -> Vec<u8> {
    let mut lines = vec![format!(
        "{{\"format\": \"mll.trace\", \"format_version\": 1, \"model_id\": \"resnet-mini\", \"head_count\": 3, \"sdag_version\": {version}}}"
    )];
    for (node, logits) in [
        ("dog", "[2.5, -1.0, 0.25]"),
        ("dog", "[3.0, -0.5, 0.0]"),
        ("cat", "[-1.5, 2.0, 0.5]"),
        ("cat", "[-0.5, 1.0, 1e-3]"),
        ("animal", "[0.1, 0.2, 0.3]"),
    ] {
        lines.push(format!("{{\"node_id\": \"{node}\", \"logits\": {logits}}}"));
    }
    with_footer(&lines)
}

#[test]
fn external_trace_loads_cleanly_and_labels() {
    let g = graph();
    let loaded = store::parse_trace(&extractor_trace(g.version())).unwrap();
    assert!(loaded.warnings.is_empty(), "{:?}", loaded.warnings);
    let trace = loaded.value;
    assert_eq!(trace.num_samples(), 5);
    trace.check_nodes(&g).unwrap();

    let means = mean_logits(&trace).unwrap();
    assert_eq!(means.means["dog"], vec![2.75, -0.75, 0.125]);
    let label = aggregate_label(&g, &means, DEFAULT_DISCOUNT, AggregationMode::Recursive).unwrap();
    assert_eq!(label.model_id, "resnet-mini");
    assert_eq!(label.scores.len(), 3);
    assert!(label.scores.values().flatten().all(|v| v.is_finite()));
}

#[test]
fn external_trace_without_footer_warns() {
    let bytes = extractor_trace(1);
    let text = String::from_utf8(bytes).unwrap();
    let body: Vec<&str> = text.lines().collect();
    let stripped = format!("{}\n", body[..body.len() - 1].join("\n"));
    let loaded = store::parse_trace(stripped.as_bytes()).unwrap();
    assert_eq!(loaded.warnings.len(), 1);
    assert_eq!(loaded.value.num_samples(), 5);
}

#[test]
fn external_trace_with_wrong_head_count_is_rejected() {
    let text = String::from_utf8(extractor_trace(1)).unwrap();
    let lines: Vec<String> = text.lines().map(String::from).collect();
    let mut lines = lines[..lines.len() - 1].to_vec();
    lines[1] = "{\"node_id\": \"dog\", \"logits\": [1.0, 2.0]}".into();
    assert!(matches!(store::parse_trace(&with_footer(&lines)), Err(StoreError::SchemaViolation(_))));
}

#[test]
fn embedding_file_drives_class_matching() {
    let g = graph();
    let vec_for = |text: &str| match text {
        t if t.contains("dog") || t == "puppy" => "[0.9, 0.1, 0.0]",
        t if t.contains("cat") || t == "kitten" => "[0.1, 0.9, 0.05]",
        t if t.contains("animal") => "[0.6, 0.6, 0.1]",
        _ => "[0.0, 0.0, 1.0]",
    };
    let mut texts: Vec<String> = g.nodes().map(|n| n.match_text()).collect();
    texts.extend(["puppy".to_string(), "kitten".to_string(), "lizard".to_string()]);
    let mut lines = vec!["{\"format\": \"mll.embeddings\", \"format_version\": 1, \"provider\": \"toy-encoder\", \"dim\": 3}".to_string()];
    for t in &texts {
        lines.push(format!("{{\"text\": {}, \"vector\": {}}}", serde_json::to_string(t).unwrap(), vec_for(t)));
    }
    let loaded = store::parse_embeddings(&with_footer(&lines)).unwrap();
    assert!(loaded.warnings.is_empty());
    assert_eq!(loaded.value.records.len(), texts.len());

    let embedder = TableEmbedder::new(loaded.value.entries()).unwrap();
    let task = TaskSpec::new("pets", ["puppy", "kitten", "lizard"]).unwrap();
    let m = match_classes(&task, &g, &embedder, &MatchConfig::default()).unwrap();
    assert_eq!(m.matched.get(&0).map(String::as_str), Some("dog"));
    assert_eq!(m.matched.get(&1).map(String::as_str), Some("cat"));
    assert!(!m.matched.contains_key(&2));
}
