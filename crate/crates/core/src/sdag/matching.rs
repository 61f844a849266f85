use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{cosine_similarity, EmbeddingProvider, SDag, SdagError};

/// A zero-shot task: nothing but the textual class names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub class_texts: Vec<String>,
}

impl TaskSpec {
    pub fn new<I, S>(task_id: impl Into<String>, class_texts: I) -> Result<Self, SdagError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let task = Self {
            task_id: task_id.into(),
            class_texts: class_texts.into_iter().map(Into::into).collect(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), SdagError> {
        if self.class_texts.is_empty() {
            return Err(SdagError::InvalidTask("no classes".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for text in &self.class_texts {
            let norm = normalize_whitespace(text);
            if norm.is_empty() {
                return Err(SdagError::InvalidTask("blank class text".into()));
            }
            if !seen.insert(norm) {
                return Err(SdagError::InvalidTask(format!("duplicate class `{text}`")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.class_texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_texts.is_empty()
    }
}

pub(crate) fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// A mutual-argmax pair still needs at least this cosine similarity.
    pub min_similarity: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { min_similarity: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub task_id: String,
    pub class_texts: Vec<String>,
    pub sdag_version: u64,
    /// class index → node id
    pub matched: BTreeMap<usize, String>,
    pub unmatched: Vec<usize>,
    /// Column order of `similarities`.
    pub node_ids: Vec<String>,
    /// `similarities[class][column]`
    pub similarities: Vec<Vec<f64>>,
}

impl MatchResult {
    pub fn num_classes(&self) -> usize {
        self.class_texts.len()
    }

    pub fn similarity(&self, class_index: usize, node_id: &str) -> Option<f64> {
        let col = self.node_ids.binary_search_by(|n| n.as_str().cmp(node_id)).ok()?;
        self.similarities.get(class_index).map(|row| row[col])
    }

    /// Matched node ids in ascending class-index order; this is the target
    /// class order used by the head-combination solver.
    pub fn target_nodes(&self) -> Vec<String> {
        self.matched.values().cloned().collect()
    }

    pub fn matched_classes(&self) -> Vec<usize> {
        self.matched.keys().copied().collect()
    }
}

/// Maps task classes onto graph nodes by mutual argmax of cosine similarity.
///
/// A class `y` and node `c` match when `c` is `y`'s most similar node and
/// `y` is `c`'s most similar class, and the similarity reaches
/// `cfg.min_similarity`. Node ties go to the smaller `node_id`; class ties go
/// to the lexicographically smaller (whitespace-normalized) class text, which
/// keeps the result independent of class ordering.
pub fn match_classes(
    task: &TaskSpec,
    graph: &SDag,
    provider: &dyn EmbeddingProvider,
    cfg: &MatchConfig,
) -> Result<MatchResult, SdagError> {
    task.validate()?;
    if graph.is_empty() {
        return Err(SdagError::Empty);
    }
    let node_ids: Vec<String> = graph.nodes().map(|n| n.node_id.clone()).collect();
    let node_vecs = graph
        .nodes()
        .map(|n| provider.embed(&provider.node_text(n)))
        .collect::<Result<Vec<_>, _>>()?;
    let class_vecs = task
        .class_texts
        .iter()
        .map(|t| provider.embed(t))
        .collect::<Result<Vec<_>, _>>()?;

    let similarities: Vec<Vec<f64>> = class_vecs
        .iter()
        .map(|cv| node_vecs.iter().map(|nv| cosine_similarity(cv, nv)).collect())
        .collect();

    // node_ids are sorted, so a strict `>` keeps the smallest id on ties
    let best_node: Vec<usize> = similarities
        .iter()
        .map(|row| {
            let mut best = 0;
            for (j, &s) in row.iter().enumerate().skip(1) {
                if s > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();

    let class_keys: Vec<String> = task.class_texts.iter().map(|t| normalize_whitespace(t)).collect();
    let best_class = |col: usize| -> usize {
        let mut best = 0;
        for y in 1..similarities.len() {
            let (s, b) = (similarities[y][col], similarities[best][col]);
            if s > b || (s == b && class_keys[y] < class_keys[best]) {
                best = y;
            }
        }
        best
    };

    let mut matched = BTreeMap::new();
    let mut unmatched = Vec::new();
    for (y, &col) in best_node.iter().enumerate() {
        if best_class(col) == y && similarities[y][col] >= cfg.min_similarity {
            matched.insert(y, node_ids[col].clone());
        } else {
            unmatched.push(y);
        }
    }

    Ok(MatchResult {
        task_id: task.task_id.clone(),
        class_texts: task.class_texts.clone(),
        sdag_version: graph.version(),
        matched,
        unmatched,
        node_ids,
        similarities,
    })
}
