//! Hub-wide scoring and ensemble construction.
//!
//! Every hub model is scored on the matched classes of a task; each class
//! then takes up to `budget_k` of the lowest-loss predictors whose loss does
//! not exceed the threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chco::{self, ChcoConfig, ChcoError, ChcoResult};
use crate::labelling::HubRecord;
use crate::matrix::Matrix;
use crate::sdag::MatchResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("label of `{model_id}` was built on graph version {label} but the task was matched on version {graph}")]
    LabelVersionMismatch { model_id: String, label: u64, graph: u64 },
    #[error("{0} matched class(es); at least two are needed to score models")]
    TooFewMatchedClasses(usize),
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
}

/// How models are scored against the matched classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Chco,
    /// Best single head per class.
    Heu,
    /// Random one-hot columns; a baseline.
    Random,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chco" => Ok(Self::Chco),
            "heu" => Ok(Self::Heu),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown method `{other}` (expected chco, heu or random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPredictor {
    pub model_id: String,
    /// Weight on each of the model's heads.
    pub combination_column: Vec<f64>,
    pub reuse_score: f64,
    pub class_node: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub budget_k: usize,
    pub score_threshold: f64,
}

impl SelectionConfig {
    pub fn new(budget_k: usize, score_threshold: f64) -> Result<Self, SelectionError> {
        let cfg = Self { budget_k, score_threshold };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Budget `k` with the uniform-predictor threshold for `num_classes`.
    pub fn with_default_threshold(budget_k: usize, num_classes: usize) -> Result<Self, SelectionError> {
        Self::new(budget_k, default_threshold(num_classes))
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.budget_k == 0 {
            return Err(SelectionError::InvalidConfig("budget_k must be at least 1".into()));
        }
        if self.score_threshold.is_nan() || self.score_threshold < 0.0 {
            return Err(SelectionError::InvalidConfig("threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// Loss of the predictor that outputs `1/n` for every class. Anything that
/// does no better is useless for the task.
pub fn default_threshold(num_classes: usize) -> f64 {
    let n = num_classes.max(2) as f64;
    n.ln() + (n / (n - 1.0)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub class_node: String,
    /// Ascending by score, ties by model id.
    pub members: Vec<ExpertPredictor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub task_id: String,
    pub sdag_version: u64,
    pub class_texts: Vec<String>,
    pub budget_k: usize,
    pub score_threshold: f64,
    /// class index → ensemble; only classes with at least one member
    pub ensembles: BTreeMap<usize, EnsembleSpec>,
    pub uncovered_classes: Vec<usize>,
    pub coverage: f64,
    pub models_used: usize,
}

impl SelectionReport {
    pub fn num_classes(&self) -> usize {
        self.class_texts.len()
    }

    pub fn covered_classes(&self) -> Vec<usize> {
        self.ensembles.keys().copied().collect()
    }

    /// Best (lowest) member score for a class.
    pub fn best_score(&self, class_index: usize) -> Option<f64> {
        self.ensembles
            .get(&class_index)
            .and_then(|e| e.members.first())
            .map(|m| m.reuse_score)
    }

    /// Keeps only the ensembles of classes in `keep`; the rest move to the
    /// uncovered list.
    pub fn restricted_to(&self, keep: &BTreeSet<usize>) -> Self {
        let mut out = self.clone();
        out.ensembles.retain(|c, _| keep.contains(c));
        out.uncovered_classes = (0..self.num_classes()).filter(|c| !out.ensembles.contains_key(c)).collect();
        let n = self.num_classes();
        out.coverage = if n == 0 { 0.0 } else { out.ensembles.len() as f64 / n as f64 };
        out.models_used = out
            .ensembles
            .values()
            .flat_map(|e| e.members.iter().map(|m| m.model_id.as_str()))
            .collect::<BTreeSet<_>>()
            .len();
        out
    }

    /// Everything goes to the generalist: used when no scoring was possible.
    pub fn all_uncovered(m: &MatchResult, sel: &SelectionConfig) -> Self {
        Self {
            task_id: m.task_id.clone(),
            sdag_version: m.sdag_version,
            class_texts: m.class_texts.clone(),
            budget_k: sel.budget_k,
            score_threshold: sel.score_threshold,
            ensembles: BTreeMap::new(),
            uncovered_classes: (0..m.num_classes()).collect(),
            coverage: 0.0,
            models_used: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreOptions {
    /// Seed for [`Method::Random`].
    pub seed: u64,
    /// Accept labels built on a different graph version.
    pub allow_version_mismatch: bool,
}

/// Per-model stream seed: stable across platforms and independent of hub order.
fn model_seed(seed: u64, model_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(model_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn random_columns(p: &chco::HeadClassMatrix, seed: u64) -> Result<ChcoResult, ChcoError> {
    let (heads, classes) = p.p.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if heads >= classes {
        sample(&mut rng, heads, classes).into_vec()
    } else {
        (0..classes).map(|_| rng.random_range(0..heads)).collect()
    };
    let mut x = Matrix::zeros(heads, classes);
    for (c, h) in picks.into_iter().enumerate() {
        x.set(h, c, 1.0);
    }
    let (class_losses, total_loss) = chco::discriminative_loss(p, &x)?;
    Ok(ChcoResult {
        x,
        class_losses,
        total_loss,
        sweeps_used: 0,
        converged: true,
        sweeps: Vec::new(),
        step_losses: Vec::new(),
    })
}

/// Scores one model on the matched target nodes.
pub fn score_model(
    record: &HubRecord,
    target_nodes: &[String],
    cfg: &ChcoConfig,
    method: Method,
    seed: u64,
) -> Result<ChcoResult, ChcoError> {
    let p = chco::head_class_probabilities(&record.label, target_nodes)?;
    match method {
        Method::Chco => chco::solve_matrix(&p, cfg),
        Method::Heu => chco::heuristic_single_head_matrix(&p),
        Method::Random => random_columns(&p, model_seed(seed, &record.model_id)),
    }
}

/// Runs the chosen scoring method for every hub model on the matched classes.
/// Models that cannot be scored are dropped with a warning.
pub fn score_hub(
    hub: &[HubRecord],
    m: &MatchResult,
    cfg: &ChcoConfig,
    method: Method,
    opts: &ScoreOptions,
) -> Result<BTreeMap<String, ChcoResult>, SelectionError> {
    if hub.is_empty() {
        return Ok(BTreeMap::new());
    }
    let targets = m.target_nodes();
    if targets.len() < 2 {
        return Err(SelectionError::TooFewMatchedClasses(targets.len()));
    }
    if !opts.allow_version_mismatch {
        if let Some(r) = hub.iter().find(|r| r.label.sdag_version != m.sdag_version) {
            return Err(SelectionError::LabelVersionMismatch {
                model_id: r.model_id.clone(),
                label: r.label.sdag_version,
                graph: m.sdag_version,
            });
        }
    }
    let configs: BTreeSet<_> = hub
        .iter()
        .map(|r| (r.label.discount.to_bits(), r.label.aggregation_mode))
        .collect();
    if configs.len() > 1 {
        log::warn!("hub labels were built with {} different discount/mode settings", configs.len());
    }

    let results: Vec<(String, Result<ChcoResult, ChcoError>)> = hub
        .par_iter()
        .map(|r| (r.model_id.clone(), score_model(r, &targets, cfg, method, opts.seed)))
        .collect();
    let mut out = BTreeMap::new();
    for (id, res) in results {
        match res {
            Ok(r) => {
                out.insert(id, r);
            }
            Err(e) => log::warn!("model `{id}` excluded: {e}"),
        }
    }
    Ok(out)
}

/// Builds the per-class ensembles from hub scores.
pub fn select_ensembles(
    scores: &BTreeMap<String, ChcoResult>,
    m: &MatchResult,
    sel: &SelectionConfig,
) -> SelectionReport {
    let mut report = SelectionReport::all_uncovered(m, sel);
    report.uncovered_classes.clear();
    let matched: Vec<(usize, &String)> = m.matched.iter().map(|(c, n)| (*c, n)).collect();
    let mut used = BTreeSet::new();

    for class in 0..m.num_classes() {
        let Some(slot) = matched.iter().position(|(c, _)| *c == class) else {
            report.uncovered_classes.push(class);
            continue;
        };
        let node = matched[slot].1;
        let mut members: Vec<ExpertPredictor> = scores
            .iter()
            .filter(|(_, r)| slot < r.class_losses.len())
            .filter(|(_, r)| r.class_losses[slot] <= sel.score_threshold)
            .map(|(id, r)| ExpertPredictor {
                model_id: id.clone(),
                combination_column: r.column(slot),
                reuse_score: r.class_losses[slot],
                class_node: node.clone(),
            })
            .collect();
        members.sort_by(|a, b| a.reuse_score.total_cmp(&b.reuse_score).then_with(|| a.model_id.cmp(&b.model_id)));
        members.truncate(sel.budget_k);
        if members.is_empty() {
            report.uncovered_classes.push(class);
            continue;
        }
        used.extend(members.iter().map(|e| e.model_id.clone()));
        report.ensembles.insert(
            class,
            EnsembleSpec {
                class_node: node.clone(),
                members,
            },
        );
    }

    let n = m.num_classes();
    report.coverage = if n == 0 { 0.0 } else { report.ensembles.len() as f64 / n as f64 };
    report.models_used = used.len();
    report
}
