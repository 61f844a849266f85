//! Model labels: per-node mean logits from pre-testing, smoothed over the
//! semantic graph with a discount factor.
//!
//! For a node `c` with first-order successors `Ω(c)`:
//!
//! ```text
//! s_c = δ · logit_c + (1 − δ) / |Ω(c)| · Σ_{c' ∈ Ω(c)} v_c'
//! ```
//!
//! where `v_c'` is the successor's raw mean logit ([`AggregationMode::OneHop`])
//! or its already aggregated score ([`AggregationMode::Recursive`], evaluated
//! in reverse topological order). Leaves keep their own mean. A node without
//! samples of its own takes the successor average at full weight. Only
//! successors that carry a value enter the average.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sdag::SDag;

pub const DEFAULT_DISCOUNT: f64 = 0.7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("trace for `{0}` holds no samples")]
    EmptyTrace(String),
    #[error("non-finite logit at node `{node}`, sample {sample}")]
    NonFiniteLogit { node: String, sample: usize },
    #[error("logit vector at node `{node}`, sample {sample} has length {got} (head_count {expected})")]
    HeadCountMismatch {
        node: String,
        sample: usize,
        expected: usize,
        got: usize,
    },
    #[error("head_count must be positive")]
    ZeroHeads,
    #[error("discount {0} outside [0, 1]")]
    InvalidDiscount(f64),
    #[error("node `{0}` is not in the graph")]
    UnknownNode(String),
    #[error("no node received a score{}", .0.as_ref().map(|n| format!(" (first uncovered: `{n}`)")).unwrap_or_default())]
    MissingMeans(Option<String>),
    #[error("graph version {graph} is older than label version {label}")]
    VersionRegression { label: u64, graph: u64 },
    #[error("means for `{got}` cannot update label of `{expected}`")]
    ModelMismatch { expected: String, got: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    OneHop,
    #[default]
    Recursive,
}

impl std::str::FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one-hop" | "one_hop" => Ok(Self::OneHop),
            "recursive" => Ok(Self::Recursive),
            other => Err(format!("unknown aggregation mode `{other}`")),
        }
    }
}

/// Raw pre-testing output of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitTrace {
    pub model_id: String,
    pub head_count: usize,
    pub sdag_version: u64,
    /// node id → one logit vector per sample
    pub node_logits: BTreeMap<String, Vec<Vec<f64>>>,
}

impl LogitTrace {
    pub fn new(model_id: impl Into<String>, head_count: usize, sdag_version: u64) -> Self {
        Self {
            model_id: model_id.into(),
            head_count,
            sdag_version,
            node_logits: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, node_id: impl Into<String>, logits: Vec<f64>) {
        self.node_logits.entry(node_id.into()).or_default().push(logits);
    }

    pub fn num_samples(&self) -> usize {
        self.node_logits.values().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        if self.head_count == 0 {
            return Err(LabelError::ZeroHeads);
        }
        for (node, samples) in &self.node_logits {
            for (i, v) in samples.iter().enumerate() {
                if v.len() != self.head_count {
                    return Err(LabelError::HeadCountMismatch {
                        node: node.clone(),
                        sample: i,
                        expected: self.head_count,
                        got: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(LabelError::NonFiniteLogit {
                        node: node.clone(),
                        sample: i,
                    });
                }
            }
        }
        Ok(())
    }

    /// Every traced node must exist in `graph`.
    pub fn check_nodes(&self, graph: &SDag) -> Result<(), LabelError> {
        match self.node_logits.keys().find(|n| !graph.contains(n)) {
            Some(n) => Err(LabelError::UnknownNode(n.clone())),
            None => Ok(()),
        }
    }
}

/// Per-node average logit vectors of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMeanLogits {
    pub model_id: String,
    pub head_count: usize,
    pub means: BTreeMap<String, Vec<f64>>,
}

impl NodeMeanLogits {
    pub fn new(model_id: impl Into<String>, head_count: usize) -> Self {
        Self {
            model_id: model_id.into(),
            head_count,
            means: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, node_id: impl Into<String>, mean: Vec<f64>) {
        self.means.insert(node_id.into(), mean);
    }
}

/// Searchable description of what a model's heads respond to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLabel {
    pub model_id: String,
    pub head_count: usize,
    pub sdag_version: u64,
    pub discount: f64,
    pub aggregation_mode: AggregationMode,
    /// node id → aggregated score vector (one entry per head)
    pub scores: BTreeMap<String, Vec<f64>>,
    /// Per-node mean logits the scores were built from; kept so the label can
    /// be updated incrementally.
    pub node_means: BTreeMap<String, Vec<f64>>,
}

impl ModelLabel {
    pub fn score(&self, node_id: &str) -> Option<&[f64]> {
        self.scores.get(node_id).map(Vec::as_slice)
    }
}

/// A model as the hub knows it: an anonymous id plus its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubRecord {
    pub model_id: String,
    pub head_count: usize,
    pub label: ModelLabel,
    /// Free-form origin notes. Never a functional description of the model.
    #[serde(default)]
    pub provenance: String,
}

impl HubRecord {
    pub fn new(label: ModelLabel, provenance: impl Into<String>) -> Self {
        Self {
            model_id: label.model_id.clone(),
            head_count: label.head_count,
            label,
            provenance: provenance.into(),
        }
    }
}

pub fn mean_logits(trace: &LogitTrace) -> Result<NodeMeanLogits, LabelError> {
    trace.validate()?;
    if trace.num_samples() == 0 {
        return Err(LabelError::EmptyTrace(trace.model_id.clone()));
    }
    let mut out = NodeMeanLogits::new(trace.model_id.clone(), trace.head_count);
    for (node, samples) in &trace.node_logits {
        if samples.is_empty() {
            continue;
        }
        let mut sum = vec![0.0; trace.head_count];
        for v in samples {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
        let n = samples.len() as f64;
        out.insert(node.clone(), sum.into_iter().map(|s| s / n).collect());
    }
    Ok(out)
}

fn check_discount(discount: f64) -> Result<(), LabelError> {
    if (0.0..=1.0).contains(&discount) {
        Ok(())
    } else {
        Err(LabelError::InvalidDiscount(discount))
    }
}

/// Score of one node given the current state of already-scored successors.
fn node_score(
    graph: &SDag,
    node_id: &str,
    means: &BTreeMap<String, Vec<f64>>,
    scores: &BTreeMap<String, Vec<f64>>,
    discount: f64,
    mode: AggregationMode,
) -> Option<Vec<f64>> {
    let own = means.get(node_id);
    let successor_values: Vec<&Vec<f64>> = graph
        .successors(node_id)
        .iter()
        .filter_map(|s| match mode {
            AggregationMode::OneHop => means.get(s),
            AggregationMode::Recursive => scores.get(s),
        })
        .collect();
    if successor_values.is_empty() {
        return own.cloned();
    }
    let k = successor_values.len() as f64;
    let heads = successor_values[0].len();
    let avg: Vec<f64> = (0..heads)
        .map(|h| successor_values.iter().map(|v| v[h]).sum::<f64>() / k)
        .collect();
    Some(match own {
        Some(own) => own
            .iter()
            .zip(&avg)
            .map(|(o, a)| discount * o + (1.0 - discount) * a)
            .collect(),
        None => avg,
    })
}

pub fn aggregate_label(
    graph: &SDag,
    means: &NodeMeanLogits,
    discount: f64,
    mode: AggregationMode,
) -> Result<ModelLabel, LabelError> {
    check_discount(discount)?;
    if let Some(unknown) = means.means.keys().find(|n| !graph.contains(n)) {
        return Err(LabelError::UnknownNode(unknown.clone()));
    }
    let mut scores = BTreeMap::new();
    for id in graph.topological_order().iter().rev() {
        if let Some(s) = node_score(graph, id, &means.means, &scores, discount, mode) {
            scores.insert(id.clone(), s);
        }
    }
    if scores.is_empty() {
        return Err(LabelError::MissingMeans(graph.topological_order().first().cloned()));
    }
    Ok(ModelLabel {
        model_id: means.model_id.clone(),
        head_count: means.head_count,
        sdag_version: graph.version(),
        discount,
        aggregation_mode: mode,
        scores,
        node_means: means.means.clone(),
    })
}

/// Merges new or replaced node means into `label` and recomputes only the
/// touched nodes and their ancestors.
pub fn update_label(
    label: &ModelLabel,
    graph: &SDag,
    incremental: &NodeMeanLogits,
) -> Result<ModelLabel, LabelError> {
    if graph.version() < label.sdag_version {
        return Err(LabelError::VersionRegression {
            label: label.sdag_version,
            graph: graph.version(),
        });
    }
    if incremental.model_id != label.model_id {
        return Err(LabelError::ModelMismatch {
            expected: label.model_id.clone(),
            got: incremental.model_id.clone(),
        });
    }
    if let Some(unknown) = incremental.means.keys().find(|n| !graph.contains(n)) {
        return Err(LabelError::UnknownNode(unknown.clone()));
    }

    let mut node_means = label.node_means.clone();
    node_means.extend(incremental.means.iter().map(|(k, v)| (k.clone(), v.clone())));

    let mut dirty: BTreeSet<String> = incremental.means.keys().cloned().collect();
    if graph.version() != label.sdag_version {
        // structural growth: nodes the old label never scored may now gain
        // coverage through new edges
        dirty.extend(graph.nodes().map(|n| &n.node_id).filter(|id| !label.scores.contains_key(*id)).cloned());
    }
    let affected = graph.ancestor_closure(dirty.iter());

    let mut scores = label.scores.clone();
    for id in affected.iter() {
        scores.remove(id);
    }
    for id in graph.topological_order().iter().rev() {
        if !affected.contains(id) {
            continue;
        }
        if let Some(s) = node_score(graph, id, &node_means, &scores, label.discount, label.aggregation_mode) {
            scores.insert(id.clone(), s);
        }
    }
    Ok(ModelLabel {
        model_id: label.model_id.clone(),
        head_count: label.head_count,
        sdag_version: graph.version(),
        discount: label.discount,
        aggregation_mode: label.aggregation_mode,
        scores,
        node_means,
    })
}
