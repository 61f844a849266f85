//! File formats for every artifact the pipeline reads or writes.
//!
//! Single documents are JSON. Labels, selection reports and benchmark
//! results sit in an envelope
//! `{format, format_version, creator, sdag_version, payload, checksum}` where
//! `checksum` is the SHA-256 of the payload's canonical (compact, sorted-key)
//! JSON. Graph files keep the bare `{version, nodes}` shape with an optional
//! top-level `checksum` over the same canonical form.
//!
//! Line-delimited files (traces, predictions, embeddings, model outputs) have
//! a header line, one record per line, and a footer
//! `{"records": n, "checksum": hex}` hashing every byte before it.
//!
//! Writers go through a temporary file in the target directory and rename it
//! into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::labelling::{LogitTrace, ModelLabel};
use crate::reuse::{Prediction, Route};
use crate::sdag::{SDag, SdagDocument, TaskSpec};
use crate::selection::SelectionReport;
use crate::synth::BenchmarkResult;

pub const CREATOR: &str = concat!("mll ", env!("CARGO_PKG_VERSION"));

pub const TRACE_FORMAT: &str = "mll.trace";
pub const LABEL_FORMAT: &str = "mll.label";
pub const REPORT_FORMAT: &str = "mll.selection";
pub const PREDICTIONS_FORMAT: &str = "mll.predictions";
pub const BENCHMARK_FORMAT: &str = "mll.benchmark";
pub const EMBEDDINGS_FORMAT: &str = "mll.embeddings";
pub const OUTPUTS_FORMAT: &str = "mll.model_outputs";
/// Highest version of each format this build reads and the one it writes.
pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{format} format version {found} is newer than supported version {supported}")]
    FormatVersionUnsupported { format: String, found: u64, supported: u64 },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("refusing to write: {0}")]
    Unwritable(String),
}

fn schema(msg: impl Into<String>) -> StoreError {
    StoreError::SchemaViolation(msg.into())
}

/// A loaded value plus anything odd the loader tolerated.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Loaded<T> {
    fn new(value: T, warnings: Vec<String>) -> Self {
        Self { value, warnings }
    }
}

// ---------------------------------------------------------------------------
// shared plumbing

fn read_bytes(path: &Path) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let io = |source| StoreError::Io { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Compact JSON with sorted keys.
fn canonical(v: &Value) -> Vec<u8> {
    serde_json::to_vec(v).expect("json values always serialize")
}

fn parse_json(bytes: &[u8], what: &str) -> Result<Value, StoreError> {
    let text = std::str::from_utf8(bytes).map_err(|e| schema(format!("{what}: not UTF-8: {e}")))?;
    serde_json::from_str(text).map_err(|e| {
        if e.is_eof() {
            StoreError::TruncatedFile(format!("{what}: {e}"))
        } else {
            schema(format!("{what}: {e}"))
        }
    })
}

fn decode<T: DeserializeOwned>(v: Value, what: &str) -> Result<T, StoreError> {
    serde_json::from_value(v).map_err(|e| schema(format!("{what}: {e}")))
}

/// Serializes `x` and checks it reads back unchanged. JSON has no NaN or
/// infinity, so non-finite numbers fail here.
fn to_exact_value<T>(x: &T, what: &str) -> Result<Value, StoreError>
where
    T: Serialize + DeserializeOwned + PartialEq,
{
    let v = serde_json::to_value(x).map_err(|e| StoreError::Unwritable(format!("{what}: {e}")))?;
    match serde_json::from_value::<T>(v.clone()) {
        Ok(back) if back == *x => Ok(v),
        _ => Err(StoreError::Unwritable(format!(
            "{what} does not survive serialization (non-finite number?)"
        ))),
    }
}

fn check_version(format: &str, v: Option<&Value>) -> Result<(), StoreError> {
    let Some(v) = v else { return Ok(()) };
    let found = v.as_u64().ok_or_else(|| schema(format!("{format}: format_version must be a non-negative integer")))?;
    if found == 0 {
        return Err(schema(format!("{format}: format_version 0 does not exist")));
    }
    if found > FORMAT_VERSION {
        return Err(StoreError::FormatVersionUnsupported {
            format: format.into(),
            found,
            supported: FORMAT_VERSION,
        });
    }
    Ok(())
}

fn check_format(expected: &str, obj: &Map<String, Value>) -> Result<(), StoreError> {
    match obj.get("format") {
        None => Ok(()),
        Some(Value::String(s)) if s == expected => Ok(()),
        Some(other) => Err(schema(format!("expected format `{expected}`, found {other}"))),
    }
}

fn unknown_keys(obj: &Map<String, Value>, known: &[&str], what: &str) -> Vec<String> {
    obj.keys()
        .filter(|k| !known.contains(&k.as_str()))
        .map(|k| format!("{what}: ignoring unknown field `{k}`"))
        .collect()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

// ---------------------------------------------------------------------------
// envelope documents

const ENVELOPE_KEYS: &[&str] = &["format", "format_version", "creator", "sdag_version", "payload", "checksum"];

fn save_envelope<T>(path: &Path, format: &str, sdag_version: Option<u64>, x: &T) -> Result<(), StoreError>
where
    T: Serialize + DeserializeOwned + PartialEq,
{
    let payload = to_exact_value(x, format)?;
    let checksum = sha256_hex(&canonical(&payload));
    let mut doc = Map::new();
    doc.insert("format".into(), format.into());
    doc.insert("format_version".into(), FORMAT_VERSION.into());
    doc.insert("creator".into(), CREATOR.into());
    if let Some(v) = sdag_version {
        doc.insert("sdag_version".into(), v.into());
    }
    doc.insert("payload".into(), payload);
    doc.insert("checksum".into(), checksum.into());
    let mut bytes = serde_json::to_vec_pretty(&Value::Object(doc)).expect("json values always serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn parse_envelope<T: DeserializeOwned>(bytes: &[u8], format: &str) -> Result<Loaded<(T, Option<u64>)>, StoreError> {
    let v = parse_json(bytes, format)?;
    let Value::Object(mut obj) = v else {
        return Err(schema(format!("{format}: top level must be an object")));
    };
    if obj.get("format").is_none() {
        return Err(schema(format!("{format}: missing `format`")));
    }
    check_format(format, &obj)?;
    check_version(format, obj.get("format_version"))?;
    if obj.get("format_version").is_none() {
        return Err(schema(format!("{format}: missing `format_version`")));
    }
    let warnings = unknown_keys(&obj, ENVELOPE_KEYS, format);
    let payload = obj.remove("payload").ok_or_else(|| schema(format!("{format}: missing `payload`")))?;
    let checksum = obj.get("checksum").and_then(Value::as_str).ok_or_else(|| schema(format!("{format}: missing `checksum`")))?;
    if sha256_hex(&canonical(&payload)) != checksum {
        return Err(schema(format!("{format}: checksum does not match payload")));
    }
    let sdag_version = match obj.get("sdag_version") {
        None => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| schema(format!("{format}: sdag_version must be an integer")))?),
    };
    let value = decode(payload, format)?;
    Ok(Loaded::new((value, sdag_version), warnings))
}

fn check_header_version(format: &str, header: Option<u64>, inner: u64) -> Result<(), StoreError> {
    match header {
        Some(h) if h != inner => Err(schema(format!("{format}: envelope sdag_version {h} disagrees with payload {inner}"))),
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// graph

pub fn save_sdag(path: &Path, graph: &SDag) -> Result<(), StoreError> {
    let body = to_exact_value(graph, "graph")?;
    let checksum = sha256_hex(&canonical(&body));
    let Value::Object(mut obj) = body else { unreachable!("graphs serialize to objects") };
    obj.insert("checksum".into(), checksum.into());
    let mut bytes = serde_json::to_vec_pretty(&Value::Object(obj)).expect("json values always serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Reads a graph file. A `checksum` field, when present, must match; other
/// unknown top-level fields are reported as warnings, unknown node fields are
/// ignored.
pub fn load_sdag(path: &Path) -> Result<Loaded<SDag>, StoreError> {
    parse_sdag(&read_bytes(path)?)
}

pub fn parse_sdag(bytes: &[u8]) -> Result<Loaded<SDag>, StoreError> {
    let v = parse_json(bytes, "graph")?;
    let Value::Object(mut obj) = v else {
        return Err(schema("graph: top level must be an object"));
    };
    let warnings = unknown_keys(&obj, &["version", "nodes", "checksum"], "graph");
    let checksum = obj.remove("checksum");
    let mut body = Map::new();
    for key in ["version", "nodes"] {
        let v = obj.remove(key).ok_or_else(|| schema(format!("graph: missing `{key}`")))?;
        body.insert(key.into(), v);
    }
    let body = Value::Object(body);
    if let Some(c) = checksum {
        let c = c.as_str().ok_or_else(|| schema("graph: checksum must be a string"))?;
        if sha256_hex(&canonical(&body)) != c {
            return Err(schema("graph: checksum does not match content"));
        }
    }
    let doc: SdagDocument = decode(body, "graph")?;
    let graph = SDag::try_from(doc).map_err(|e| schema(format!("graph: {e}")))?;
    Ok(Loaded::new(graph, warnings))
}

// ---------------------------------------------------------------------------
// line-delimited files

struct Lines {
    header: Map<String, Value>,
    records: Vec<(usize, Value)>,
    warnings: Vec<String>,
}

fn write_lines<I>(path: &Path, header: Map<String, Value>, records: I) -> Result<(), StoreError>
where
    I: IntoIterator<Item = Value>,
{
    let mut out = canonical(&Value::Object(header));
    out.push(b'\n');
    let mut n = 0u64;
    for r in records {
        out.extend(canonical(&r));
        out.push(b'\n');
        n += 1;
    }
    let footer = serde_json::json!({ "records": n, "checksum": sha256_hex(&out) });
    out.extend(canonical(&footer));
    out.push(b'\n');
    write_atomic(path, &out)
}

fn is_footer(v: &Value) -> bool {
    v.as_object().is_some_and(|o| o.len() == 2 && o.contains_key("records") && o.contains_key("checksum"))
}

fn read_lines(bytes: &[u8], format: &str, header_keys: &[&str]) -> Result<Lines, StoreError> {
    if bytes.is_empty() {
        return Err(StoreError::TruncatedFile(format!("{format}: empty file")));
    }
    if bytes.last() != Some(&b'\n') {
        return Err(StoreError::TruncatedFile(format!("{format}: last line is incomplete")));
    }
    let text = std::str::from_utf8(bytes).map_err(|e| schema(format!("{format}: not UTF-8: {e}")))?;
    let body = &text[..text.len() - 1];
    let mut lines: Vec<(usize, &str)> = body.split('\n').enumerate().map(|(i, l)| (i + 1, l)).collect();

    let mut warnings = Vec::new();
    let parse = |no: usize, l: &str| -> Result<Value, StoreError> {
        serde_json::from_str(l).map_err(|e| schema(format!("{format} line {no}: {e}")))
    };

    let (last_no, last) = *lines.last().expect("at least one line");
    let last_value = parse(last_no, last)?;
    if is_footer(&last_value) && lines.len() > 1 {
        let covered = body.len() - last.len();
        let want = last_value["checksum"].as_str().ok_or_else(|| schema(format!("{format}: footer checksum must be a string")))?;
        if sha256_hex(&bytes[..covered]) != want {
            return Err(schema(format!("{format}: checksum does not match content")));
        }
        let count = last_value["records"].as_u64().ok_or_else(|| schema(format!("{format}: footer record count must be an integer")))?;
        lines.pop();
        if count != (lines.len() - 1) as u64 {
            return Err(StoreError::TruncatedFile(format!(
                "{format}: footer promises {count} records, found {}",
                lines.len() - 1
            )));
        }
    } else {
        warnings.push(format!("{format}: no integrity footer; content not verified"));
    }

    let (hno, hline) = lines[0];
    let Value::Object(header) = parse(hno, hline)? else {
        return Err(schema(format!("{format} line 1: header must be an object")));
    };
    check_format(format, &header)?;
    check_version(format, header.get("format_version"))?;
    let mut known = vec!["format", "format_version", "creator"];
    known.extend_from_slice(header_keys);
    warnings.extend(unknown_keys(&header, &known, format));

    let records = lines[1..]
        .iter()
        .map(|&(no, l)| {
            let v = parse(no, l)?;
            if is_footer(&v) {
                return Err(schema(format!("{format} line {no}: footer before end of file")));
            }
            Ok((no, v))
        })
        .collect::<Result<_, _>>()?;
    Ok(Lines { header, records, warnings })
}

fn header_field<T: DeserializeOwned>(h: &Map<String, Value>, key: &str, format: &str) -> Result<T, StoreError> {
    let v = h.get(key).cloned().ok_or_else(|| schema(format!("{format} header: missing `{key}`")))?;
    decode(v, &format!("{format} header `{key}`"))
}

fn base_header(format: &str) -> Map<String, Value> {
    let mut h = Map::new();
    h.insert("format".into(), format.into());
    h.insert("format_version".into(), FORMAT_VERSION.into());
    h.insert("creator".into(), CREATOR.into());
    h
}

// traces

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceRecord {
    node_id: String,
    logits: Vec<f64>,
}

pub fn save_trace(path: &Path, trace: &LogitTrace) -> Result<(), StoreError> {
    trace.validate().map_err(|e| StoreError::Unwritable(format!("trace: {e}")))?;
    if let Some((n, _)) = trace.node_logits.iter().find(|(_, s)| s.is_empty()) {
        return Err(StoreError::Unwritable(format!("trace: node `{n}` has no samples")));
    }
    let mut h = base_header(TRACE_FORMAT);
    h.insert("model_id".into(), trace.model_id.clone().into());
    h.insert("head_count".into(), trace.head_count.into());
    h.insert("sdag_version".into(), trace.sdag_version.into());
    let records = trace.node_logits.iter().flat_map(|(node, samples)| {
        samples.iter().map(move |l| serde_json::json!({ "node_id": node, "logits": l }))
    });
    write_lines(path, h, records)
}

/// Reads a trace. The graph version is not checked here; that happens when
/// the label is built or used.
pub fn load_trace(path: &Path) -> Result<Loaded<LogitTrace>, StoreError> {
    parse_trace(&read_bytes(path)?)
}

pub fn parse_trace(bytes: &[u8]) -> Result<Loaded<LogitTrace>, StoreError> {
    let lines = read_lines(bytes, TRACE_FORMAT, &["model_id", "head_count", "sdag_version"])?;
    let h = &lines.header;
    let mut trace = LogitTrace::new(
        header_field::<String>(h, "model_id", TRACE_FORMAT)?,
        header_field(h, "head_count", TRACE_FORMAT)?,
        header_field(h, "sdag_version", TRACE_FORMAT)?,
    );
    for (no, v) in lines.records {
        let r: TraceRecord = decode(v, &format!("trace line {no}"))?;
        trace.push(r.node_id, r.logits);
    }
    if trace.num_samples() == 0 {
        return Err(schema("trace: no samples"));
    }
    trace.validate().map_err(|e| schema(format!("trace: {e}")))?;
    Ok(Loaded::new(trace, lines.warnings))
}

// predictions

/// One predicted test sample as written to prediction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub predicted_class: usize,
    pub class_text: String,
    pub confidence: f64,
    pub route: Route,
    pub scores: Vec<Option<f64>>,
}

impl PredictionRecord {
    pub fn new(sample_id: impl Into<String>, p: &Prediction) -> Self {
        Self {
            sample_id: sample_id.into(),
            predicted_class: p.class_index,
            class_text: p.class_text.clone(),
            confidence: p.confidence,
            route: p.route,
            scores: p.per_class_scores.clone(),
        }
    }

    pub fn to_prediction(&self) -> Prediction {
        Prediction {
            class_index: self.predicted_class,
            class_text: self.class_text.clone(),
            confidence: self.confidence,
            per_class_scores: self.scores.clone(),
            route: self.route,
        }
    }

    fn is_finite(&self) -> bool {
        self.confidence.is_finite() && self.scores.iter().flatten().all(|s| s.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub task_id: String,
    pub sdag_version: u64,
    pub class_texts: Vec<String>,
    pub records: Vec<PredictionRecord>,
}

pub fn save_predictions(path: &Path, file: &PredictionFile) -> Result<(), StoreError> {
    if let Some(r) = file.records.iter().find(|r| !r.is_finite()) {
        return Err(StoreError::Unwritable(format!("prediction `{}` has a non-finite score", r.sample_id)));
    }
    let mut h = base_header(PREDICTIONS_FORMAT);
    h.insert("task_id".into(), file.task_id.clone().into());
    h.insert("sdag_version".into(), file.sdag_version.into());
    h.insert("class_texts".into(), serde_json::to_value(&file.class_texts).expect("strings serialize"));
    let records = file
        .records
        .iter()
        .map(|r| serde_json::to_value(r).expect("finite records serialize"));
    write_lines(path, h, records)
}

pub fn load_predictions(path: &Path) -> Result<Loaded<PredictionFile>, StoreError> {
    parse_predictions(&read_bytes(path)?)
}

pub fn parse_predictions(bytes: &[u8]) -> Result<Loaded<PredictionFile>, StoreError> {
    let f = PREDICTIONS_FORMAT;
    let lines = read_lines(bytes, f, &["task_id", "sdag_version", "class_texts"])?;
    let class_texts: Vec<String> = header_field(&lines.header, "class_texts", f)?;
    let mut records = Vec::with_capacity(lines.records.len());
    for (no, v) in lines.records {
        let r: PredictionRecord = decode(v, &format!("predictions line {no}"))?;
        if r.predicted_class >= class_texts.len() || r.scores.len() != class_texts.len() {
            return Err(schema(format!("predictions line {no}: class index or score count out of range")));
        }
        records.push(r);
    }
    Ok(Loaded::new(
        PredictionFile {
            task_id: header_field(&lines.header, "task_id", f)?,
            sdag_version: header_field(&lines.header, "sdag_version", f)?,
            class_texts,
            records,
        },
        lines.warnings,
    ))
}

// embeddings

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub text: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFile {
    /// Free text naming the embedding model.
    pub provider: String,
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingFile {
    pub fn entries(&self) -> impl Iterator<Item = (String, Vec<f64>)> + '_ {
        self.records.iter().map(|r| (r.text.clone(), r.vector.clone()))
    }
}

pub fn save_embeddings(path: &Path, file: &EmbeddingFile) -> Result<(), StoreError> {
    if let Some(r) = file.records.iter().find(|r| r.vector.len() != file.dim || !all_finite(&r.vector)) {
        return Err(StoreError::Unwritable(format!("embedding for `{}` is malformed", r.text)));
    }
    let mut h = base_header(EMBEDDINGS_FORMAT);
    h.insert("provider".into(), file.provider.clone().into());
    h.insert("dim".into(), file.dim.into());
    write_lines(path, h, file.records.iter().map(|r| serde_json::to_value(r).expect("finite")))
}

pub fn load_embeddings(path: &Path) -> Result<Loaded<EmbeddingFile>, StoreError> {
    parse_embeddings(&read_bytes(path)?)
}

pub fn parse_embeddings(bytes: &[u8]) -> Result<Loaded<EmbeddingFile>, StoreError> {
    let f = EMBEDDINGS_FORMAT;
    let lines = read_lines(bytes, f, &["provider", "dim"])?;
    let dim: usize = header_field(&lines.header, "dim", f)?;
    let mut records = Vec::new();
    for (no, v) in lines.records {
        let r: EmbeddingRecord = decode(v, &format!("embeddings line {no}"))?;
        if r.vector.len() != dim {
            return Err(schema(format!("embeddings line {no}: vector has {} values, header says {dim}", r.vector.len())));
        }
        records.push(r);
    }
    Ok(Loaded::new(
        EmbeddingFile { provider: header_field(&lines.header, "provider", f)?, dim, records },
        lines.warnings,
    ))
}

// model outputs on a test set

/// Outputs of hub models (and optionally the generalist) on one test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleOutputs {
    pub sample_id: String,
    /// model id → raw logits
    pub logits: BTreeMap<String, Vec<f64>>,
    /// Generalist probabilities over the task classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generalist: Option<Vec<f64>>,
    /// Ground-truth class index, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputsFile {
    pub task_id: String,
    pub samples: Vec<SampleOutputs>,
}

pub fn save_outputs(path: &Path, file: &OutputsFile) -> Result<(), StoreError> {
    for s in &file.samples {
        let ok = s.logits.values().all(|l| all_finite(l)) && s.generalist.as_deref().is_none_or(all_finite);
        if !ok {
            return Err(StoreError::Unwritable(format!("sample `{}` has a non-finite output", s.sample_id)));
        }
    }
    let mut h = base_header(OUTPUTS_FORMAT);
    h.insert("task_id".into(), file.task_id.clone().into());
    write_lines(path, h, file.samples.iter().map(|s| serde_json::to_value(s).expect("finite")))
}

pub fn load_outputs(path: &Path) -> Result<Loaded<OutputsFile>, StoreError> {
    parse_outputs(&read_bytes(path)?)
}

pub fn parse_outputs(bytes: &[u8]) -> Result<Loaded<OutputsFile>, StoreError> {
    let lines = read_lines(bytes, OUTPUTS_FORMAT, &["task_id"])?;
    let samples = lines
        .records
        .into_iter()
        .map(|(no, v)| decode(v, &format!("outputs line {no}")))
        .collect::<Result<_, _>>()?;
    Ok(Loaded::new(
        OutputsFile { task_id: header_field(&lines.header, "task_id", OUTPUTS_FORMAT)?, samples },
        lines.warnings,
    ))
}

// ---------------------------------------------------------------------------
// labels, reports, benchmarks

pub fn save_label(path: &Path, label: &ModelLabel) -> Result<(), StoreError> {
    save_envelope(path, LABEL_FORMAT, Some(label.sdag_version), label)
}

pub fn load_label(path: &Path) -> Result<Loaded<ModelLabel>, StoreError> {
    parse_label(&read_bytes(path)?)
}

pub fn parse_label(bytes: &[u8]) -> Result<Loaded<ModelLabel>, StoreError> {
    let Loaded { value: (label, hv), warnings } = parse_envelope::<ModelLabel>(bytes, LABEL_FORMAT)?;
    check_header_version(LABEL_FORMAT, hv, label.sdag_version)?;
    if label.head_count == 0 {
        return Err(schema("label: zero heads"));
    }
    for (node, s) in label.scores.iter().chain(&label.node_means) {
        if s.len() != label.head_count {
            return Err(schema(format!("label: node `{node}` has {} values, expected {}", s.len(), label.head_count)));
        }
    }
    if !label.discount.is_finite() || label.discount <= 0.0 || label.discount > 1.0 {
        return Err(schema("label: discount out of (0, 1]"));
    }
    Ok(Loaded::new(label, warnings))
}

pub fn save_report(path: &Path, report: &SelectionReport) -> Result<(), StoreError> {
    save_envelope(path, REPORT_FORMAT, Some(report.sdag_version), report)
}

pub fn load_report(path: &Path) -> Result<Loaded<SelectionReport>, StoreError> {
    parse_report(&read_bytes(path)?)
}

pub fn parse_report(bytes: &[u8]) -> Result<Loaded<SelectionReport>, StoreError> {
    let Loaded { value: (r, hv), warnings } = parse_envelope::<SelectionReport>(bytes, REPORT_FORMAT)?;
    check_header_version(REPORT_FORMAT, hv, r.sdag_version)?;
    let n = r.num_classes();
    if r.ensembles.keys().chain(&r.uncovered_classes).any(|&c| c >= n)
        || r.ensembles.len() + r.uncovered_classes.len() != n
    {
        return Err(schema("selection report: class indices do not partition the task"));
    }
    Ok(Loaded::new(r, warnings))
}

pub fn save_benchmark(path: &Path, result: &BenchmarkResult) -> Result<(), StoreError> {
    save_envelope(path, BENCHMARK_FORMAT, None, result)
}

pub fn load_benchmark(path: &Path) -> Result<Loaded<BenchmarkResult>, StoreError> {
    parse_benchmark(&read_bytes(path)?)
}

pub fn parse_benchmark(bytes: &[u8]) -> Result<Loaded<BenchmarkResult>, StoreError> {
    let Loaded { value: (r, _), warnings } = parse_envelope::<BenchmarkResult>(bytes, BENCHMARK_FORMAT)?;
    Ok(Loaded::new(r, warnings))
}

// ---------------------------------------------------------------------------
// hand-written inputs

/// Task file: `{"task_id": ..., "class_texts": [...]}`.
pub fn load_task(path: &Path) -> Result<Loaded<TaskSpec>, StoreError> {
    let v = parse_json(&read_bytes(path)?, "task")?;
    let warnings = match &v {
        Value::Object(o) => unknown_keys(o, &["task_id", "class_texts"], "task"),
        _ => return Err(schema("task: top level must be an object")),
    };
    let mut obj = v;
    if let Value::Object(o) = &mut obj {
        o.retain(|k, _| k == "task_id" || k == "class_texts");
    }
    let task: TaskSpec = decode(obj, "task")?;
    task.validate().map_err(|e| schema(format!("task: {e}")))?;
    Ok(Loaded::new(task, warnings))
}

pub fn save_task(path: &Path, task: &TaskSpec) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(task).expect("tasks serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Any serializable value as pretty JSON, written atomically.
pub fn save_json<T: Serialize>(path: &Path, x: &T) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(x).map_err(|e| StoreError::Unwritable(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn save_text(path: &Path, text: &str) -> Result<(), StoreError> {
    write_atomic(path, text.as_bytes())
}
