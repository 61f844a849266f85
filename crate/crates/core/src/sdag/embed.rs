use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{SdagError, SemanticNode};

/// Dimension of [`HashedTrigramEmbedder`] vectors.
pub const FALLBACK_DIM: usize = 256;

const EMPTY_TOKEN: &str = "∅";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SdagError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(SdagError::ProviderFailure("embedding has no finite values".into()));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(SdagError::ProviderFailure("embedding is the zero vector".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    assert_eq!(a.dim(), b.dim(), "embedding dimensions differ");
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    (dot / (a.norm() * b.norm())).clamp(-1.0, 1.0)
}

/// Turns text into vectors for semantic matching.
pub trait EmbeddingProvider: Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, SdagError>;

    /// Text representing a graph node. Semantic providers see the
    /// `Name:`/`Description:` rendering.
    fn node_text(&self, node: &SemanticNode) -> String {
        node.match_text()
    }
}

/// Deterministic offline provider: a bag of hashed character trigrams,
/// L2-normalized.
///
/// Lexical features cannot see through the `Name:/Description:` template
/// (its boilerplate trigrams swamp a short class name), so this provider
/// represents nodes by their name alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedTrigramEmbedder;

impl HashedTrigramEmbedder {
    /// Lower-cased, whitespace-collapsed text padded with one space on each
    /// side, cut into overlapping 3-character windows.
    pub fn trigrams(text: &str) -> Vec<String> {
        let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let chars: Vec<char> = format!(" {normalized} ").chars().collect();
        if normalized.is_empty() {
            return Vec::new();
        }
        chars.windows(3).map(|w| w.iter().collect()).collect()
    }

    fn bucket(token: &str) -> usize {
        (fnv1a(token.as_bytes()) % FALLBACK_DIM as u64) as usize
    }
}

impl EmbeddingProvider for HashedTrigramEmbedder {
    fn dim(&self) -> usize {
        FALLBACK_DIM
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, SdagError> {
        if text.trim().is_empty() {
            return Err(SdagError::EmptyText);
        }
        let mut grams = Self::trigrams(text);
        if grams.is_empty() {
            grams.push(EMPTY_TOKEN.to_string());
        }
        let mut values = vec![0.0; FALLBACK_DIM];
        for g in &grams {
            values[Self::bucket(g)] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        values.iter_mut().for_each(|v| *v /= norm);
        EmbeddingVector::new(values)
    }

    fn node_text(&self, node: &SemanticNode) -> String {
        node.name.clone()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Precomputed embeddings keyed by exact text, e.g. loaded from an
/// embedding file produced by an external API.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    dim: usize,
    table: HashMap<String, EmbeddingVector>,
}

impl TableEmbedder {
    pub fn new<I>(entries: I) -> Result<Self, SdagError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut dim = 0;
        let mut table = HashMap::new();
        for (text, values) in entries {
            let v = EmbeddingVector::new(values)?;
            if dim == 0 {
                dim = v.dim();
            } else if v.dim() != dim {
                return Err(SdagError::ProviderFailure(format!(
                    "embedding for `{text}` has dim {} (expected {dim})",
                    v.dim()
                )));
            }
            table.insert(text, v);
        }
        Ok(Self { dim, table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, SdagError> {
        if text.trim().is_empty() {
            return Err(SdagError::EmptyText);
        }
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| SdagError::ProviderFailure(format!("no embedding for `{text}`")))
    }
}
