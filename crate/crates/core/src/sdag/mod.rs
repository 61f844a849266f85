//! Semantic DAG: class nodes linked hypernym → hyponym, with representative
//! sample references used to pre-test models.
//!
//! Graphs are immutable values. [`SDag::insert_node`] returns a new graph with
//! a bumped version, so readers can keep using the old one.

mod embed;
mod matching;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{
    cosine_similarity, EmbeddingProvider, EmbeddingVector, HashedTrigramEmbedder, TableEmbedder,
    FALLBACK_DIM,
};
pub use matching::{match_classes, MatchConfig, MatchResult, TaskSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdagError {
    #[error("graph has no nodes")]
    Empty,
    #[error("duplicate node id `{0}`")]
    DuplicateNodeId(String),
    #[error("node `{node}` lists unknown successor `{successor}`")]
    DanglingSuccessor { node: String, successor: String },
    #[error("unknown predecessor `{0}`")]
    UnknownPredecessor(String),
    #[error("cycle detected: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("embedding provider failed: {0}")]
    ProviderFailure(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("text to embed is empty")]
    EmptyText,
}

/// One semantic class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticNode {
    pub node_id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// First-order hyponyms, in declaration order.
    #[serde(default)]
    pub successor_ids: Vec<String>,
    #[serde(default)]
    pub sample_refs: Vec<String>,
}

impl SemanticNode {
    pub fn new(node_id: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            node_id: node_id.into(),
            name: name.into(),
            description: String::new(),
            successor_ids: Vec::new(),
            sample_refs: Vec::new(),
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_successors<I, S>(mut self, successors: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.successor_ids = successors.into_iter().map(Into::into).collect();
        self
    }

    /// Text used for semantic matching against task classes.
    pub fn match_text(&self) -> String {
        format!("Name: {}\nDescription: {}", self.name, self.description)
    }
}

/// A node as written in graph files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub successors: Vec<String>,
    #[serde(default)]
    pub samples: Vec<String>,
}

/// File shape of a graph: a version and its nodes in id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdagDocument {
    pub version: u64,
    pub nodes: Vec<NodeRecord>,
}

impl From<SDag> for SdagDocument {
    fn from(g: SDag) -> Self {
        Self {
            version: g.version,
            nodes: g
                .nodes
                .into_values()
                .map(|n| NodeRecord {
                    id: n.node_id,
                    name: n.name,
                    description: n.description,
                    successors: n.successor_ids,
                    samples: n.sample_refs,
                })
                .collect(),
        }
    }
}

impl TryFrom<SdagDocument> for SDag {
    type Error = SdagError;

    fn try_from(doc: SdagDocument) -> Result<Self, Self::Error> {
        let nodes = doc
            .nodes
            .into_iter()
            .map(|r| SemanticNode {
                node_id: r.id,
                name: r.name,
                description: r.description,
                successor_ids: r.successors,
                sample_refs: r.samples,
            })
            .collect();
        SDag::with_version(nodes, doc.version)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SdagDocument", try_from = "SdagDocument")]
pub struct SDag {
    nodes: BTreeMap<String, SemanticNode>,
    predecessors: BTreeMap<String, Vec<String>>,
    order: Vec<String>,
    version: u64,
}

impl SDag {
    /// Validates node definitions and builds a version-1 graph.
    pub fn build(node_definitions: Vec<SemanticNode>) -> Result<Self, SdagError> {
        Self::with_version(node_definitions, 1)
    }

    /// Like [`SDag::build`] but keeps a stored version number (used by loaders).
    pub fn with_version(node_definitions: Vec<SemanticNode>, version: u64) -> Result<Self, SdagError> {
        if node_definitions.is_empty() {
            return Err(SdagError::Empty);
        }
        let mut nodes = BTreeMap::new();
        for node in node_definitions {
            if nodes.contains_key(&node.node_id) {
                return Err(SdagError::DuplicateNodeId(node.node_id));
            }
            nodes.insert(node.node_id.clone(), node);
        }
        Self::from_map(nodes, version)
    }

    fn from_map(nodes: BTreeMap<String, SemanticNode>, version: u64) -> Result<Self, SdagError> {
        let mut predecessors: BTreeMap<String, Vec<String>> =
            nodes.keys().map(|k| (k.clone(), Vec::new())).collect();
        for node in nodes.values() {
            for succ in &node.successor_ids {
                match predecessors.get_mut(succ) {
                    Some(preds) => preds.push(node.node_id.clone()),
                    None => {
                        return Err(SdagError::DanglingSuccessor {
                            node: node.node_id.clone(),
                            successor: succ.clone(),
                        })
                    }
                }
            }
        }
        let order = kahn_order(&nodes, &predecessors)?;
        Ok(Self {
            nodes,
            predecessors,
            order,
            version,
        })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node_id: &str) -> bool {
        self.nodes.contains_key(node_id)
    }

    pub fn node(&self, node_id: &str) -> Option<&SemanticNode> {
        self.nodes.get(node_id)
    }

    /// Nodes in `node_id` order.
    pub fn nodes(&self) -> impl Iterator<Item = &SemanticNode> {
        self.nodes.values()
    }

    pub fn successors(&self, node_id: &str) -> &[String] {
        self.nodes
            .get(node_id)
            .map(|n| n.successor_ids.as_slice())
            .unwrap_or(&[])
    }

    pub fn predecessors(&self, node_id: &str) -> &[String] {
        self.predecessors
            .get(node_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn is_leaf(&self, node_id: &str) -> bool {
        self.successors(node_id).is_empty()
    }

    /// Every node precedes all of its successors; ties between ready nodes
    /// are broken by ascending `node_id`.
    pub fn topological_order(&self) -> &[String] {
        &self.order
    }

    /// `node_ids` together with all of their ancestors.
    pub fn ancestor_closure<'a, I>(&self, node_ids: I) -> BTreeSet<String>
    where
        I: IntoIterator<Item = &'a String>,
    {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = node_ids.into_iter().map(String::as_str).collect();
        while let Some(id) = stack.pop() {
            if !self.contains(id) || !seen.insert(id.to_string()) {
                continue;
            }
            stack.extend(self.predecessors(id).iter().map(String::as_str));
        }
        seen
    }

    /// Returns a new graph containing `node` attached below every id in
    /// `predecessor_ids`. With no predecessors the node is independent.
    pub fn insert_node(&self, node: SemanticNode, predecessor_ids: &[String]) -> Result<Self, SdagError> {
        if self.nodes.contains_key(&node.node_id) {
            return Err(SdagError::DuplicateNodeId(node.node_id));
        }
        for pred in predecessor_ids {
            if pred == &node.node_id {
                return Err(SdagError::CycleDetected(vec![pred.clone(), pred.clone()]));
            }
            if !self.nodes.contains_key(pred) {
                return Err(SdagError::UnknownPredecessor(pred.clone()));
            }
        }
        let mut nodes = self.nodes.clone();
        for pred in predecessor_ids {
            let p = nodes.get_mut(pred).expect("checked above");
            if !p.successor_ids.contains(&node.node_id) {
                p.successor_ids.push(node.node_id.clone());
            }
        }
        nodes.insert(node.node_id.clone(), node);
        Self::from_map(nodes, self.version + 1)
    }
}

/// Kahn's algorithm with a lexicographic ready set.
fn kahn_order(
    nodes: &BTreeMap<String, SemanticNode>,
    predecessors: &BTreeMap<String, Vec<String>>,
) -> Result<Vec<String>, SdagError> {
    let mut indegree: HashMap<&str, usize> = predecessors
        .iter()
        .map(|(k, v)| (k.as_str(), v.len()))
        .collect();
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&k, _)| k)
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(id) = ready.pop_first() {
        order.push(id.to_string());
        for succ in &nodes[id].successor_ids {
            let d = indegree.get_mut(succ.as_str()).expect("validated successor");
            *d -= 1;
            if *d == 0 {
                ready.insert(succ.as_str());
            }
        }
    }
    if order.len() == nodes.len() {
        return Ok(order);
    }
    let placed: BTreeSet<&str> = order.iter().map(String::as_str).collect();
    Err(SdagError::CycleDetected(find_cycle(predecessors, &placed)))
}

/// Every unplaced node still has an unplaced predecessor, so walking
/// predecessors must revisit a node; the loop found that way is a cycle.
fn find_cycle(
    predecessors: &BTreeMap<String, Vec<String>>,
    placed: &BTreeSet<&str>,
) -> Vec<String> {
    let start = predecessors
        .keys()
        .find(|k| !placed.contains(k.as_str()))
        .expect("some node is unplaced");
    let mut path: Vec<&str> = Vec::new();
    let mut position: HashMap<&str, usize> = HashMap::new();
    let mut current = start.as_str();
    loop {
        if let Some(&i) = position.get(current) {
            let mut cycle: Vec<String> = path[i..].iter().map(|s| s.to_string()).collect();
            cycle.push(current.to_string());
            cycle.reverse();
            return cycle;
        }
        position.insert(current, path.len());
        path.push(current);
        current = predecessors[current]
            .iter()
            .map(String::as_str)
            .filter(|p| !placed.contains(p))
            .min()
            .expect("unplaced node has an unplaced predecessor");
    }
}
