//! Zero-shot prediction from selected ensembles, with a generalist fallback
//! for classes no ensemble covers.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{argmax, dot, softmax};
use crate::selection::{EnsembleSpec, SelectionReport};

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReuseError {
    #[error("no output for ensemble member `{0}`")]
    MissingModelOutput(String),
    #[error("no class is covered by an ensemble")]
    NoCoveredClasses,
    #[error("patch partition does not match the selection: {0}")]
    PartitionMismatch(String),
    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),
    #[error("logit confidence requested but `{0}` has no logits")]
    MissingLogits(String),
    #[error("member `{model_id}` has {columns} combination weights but {heads} outputs")]
    HeadCountMismatch { model_id: String, columns: usize, heads: usize },
}

/// What a model produced for one test input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub model_id: String,
    pub probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<(), ReuseError> {
    if p.is_empty() {
        return Err(ReuseError::InvalidProbabilities(format!("{what}: empty")));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(ReuseError::InvalidProbabilities(format!("{what}: negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(ReuseError::InvalidProbabilities(format!("{what}: sums to {s}")));
    }
    Ok(())
}

impl ModelOutput {
    pub fn new(model_id: impl Into<String>, probabilities: Vec<f64>) -> Result<Self, ReuseError> {
        let model_id = model_id.into();
        check_distribution(&probabilities, &model_id)?;
        Ok(Self {
            model_id,
            probabilities,
            logits: None,
        })
    }

    pub fn from_logits(model_id: impl Into<String>, logits: Vec<f64>) -> Result<Self, ReuseError> {
        let model_id = model_id.into();
        if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
            return Err(ReuseError::InvalidProbabilities(format!("{model_id}: bad logits")));
        }
        Ok(Self {
            probabilities: softmax(&logits),
            logits: Some(logits),
            model_id,
        })
    }

    pub fn heads(&self) -> usize {
        self.probabilities.len()
    }
}

/// What a member's combined head output is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    #[default]
    Prob,
    Logit,
}

impl FromStr for ConfidenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prob" => Ok(Self::Prob),
            "logit" => Ok(Self::Logit),
            other => Err(format!("unknown confidence mode `{other}` (expected prob or logit)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Experts,
    Generalist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_index: usize,
    pub class_text: String,
    pub confidence: f64,
    /// One entry per task class; `None` where the class had no score.
    pub per_class_scores: Vec<Option<f64>>,
    pub route: Route,
}

/// Stand-in for a general zero-shot model: a distribution over all task classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralistOutput {
    pub probabilities: Vec<f64>,
}

impl GeneralistOutput {
    pub fn new(probabilities: Vec<f64>) -> Result<Self, ReuseError> {
        check_distribution(&probabilities, "generalist")?;
        Ok(Self { probabilities })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPartition {
    pub expert_classes: Vec<usize>,
    pub generalist_classes: Vec<usize>,
}

impl PatchPartition {
    /// Covered classes go to the experts, everything else to the generalist.
    pub fn from_report(report: &SelectionReport) -> Self {
        let expert_classes = report.covered_classes();
        let generalist_classes = (0..report.num_classes())
            .filter(|c| !report.ensembles.contains_key(c))
            .collect();
        Self {
            expert_classes,
            generalist_classes,
        }
    }

    fn check(&self, report: &SelectionReport) -> Result<(), ReuseError> {
        let e: BTreeSet<usize> = self.expert_classes.iter().copied().collect();
        let g: BTreeSet<usize> = self.generalist_classes.iter().copied().collect();
        if e.len() != self.expert_classes.len() || g.len() != self.generalist_classes.len() {
            return Err(ReuseError::PartitionMismatch("duplicate class index".into()));
        }
        if !e.is_disjoint(&g) {
            return Err(ReuseError::PartitionMismatch("a class is on both sides".into()));
        }
        let all: BTreeSet<usize> = e.union(&g).copied().collect();
        if all != (0..report.num_classes()).collect() {
            return Err(ReuseError::PartitionMismatch("sides do not cover the task classes".into()));
        }
        if e != report.ensembles.keys().copied().collect() {
            return Err(ReuseError::PartitionMismatch("expert side differs from covered classes".into()));
        }
        Ok(())
    }
}

/// `1 − H(p)/log n` with natural-log entropy. Single-head outputs get 1.
pub fn entropy_weight_numerator(output: &ModelOutput) -> f64 {
    let n = output.heads();
    if n < 2 {
        return 1.0;
    }
    let entropy: f64 = output
        .probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    (1.0 - entropy / (n as f64).ln()).clamp(0.0, 1.0)
}

fn find<'a>(outputs: &'a [ModelOutput], model_id: &str) -> Result<&'a ModelOutput, ReuseError> {
    outputs
        .iter()
        .find(|o| o.model_id == model_id)
        .ok_or_else(|| ReuseError::MissingModelOutput(model_id.to_string()))
}

/// Entropy-weighted sum of member outputs projected on their combination columns.
pub fn ensemble_confidence(
    outputs: &[ModelOutput],
    ensemble: &EnsembleSpec,
    mode: ConfidenceMode,
) -> Result<f64, ReuseError> {
    let mut numerators = Vec::with_capacity(ensemble.members.len());
    let mut projections = Vec::with_capacity(ensemble.members.len());
    for m in &ensemble.members {
        let out = find(outputs, &m.model_id)?;
        if m.combination_column.len() != out.heads() {
            return Err(ReuseError::HeadCountMismatch {
                model_id: m.model_id.clone(),
                columns: m.combination_column.len(),
                heads: out.heads(),
            });
        }
        let values = match mode {
            ConfidenceMode::Prob => &out.probabilities,
            ConfidenceMode::Logit => out
                .logits
                .as_ref()
                .ok_or_else(|| ReuseError::MissingLogits(m.model_id.clone()))?,
        };
        numerators.push(entropy_weight_numerator(out));
        projections.push(dot(values, &m.combination_column));
    }
    if projections.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = numerators.iter().sum();
    let conf = if total > 0.0 {
        numerators.iter().zip(&projections).map(|(w, v)| w / total * v).sum()
    } else {
        projections.iter().sum::<f64>() / projections.len() as f64
    };
    Ok(conf)
}

fn pick(scores: &[Option<f64>]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (c, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((c, v));
            }
        }
    }
    best
}

fn expert_scores(
    outputs: &[ModelOutput],
    report: &SelectionReport,
    mode: ConfidenceMode,
) -> Result<Vec<Option<f64>>, ReuseError> {
    let mut scores = vec![None; report.num_classes()];
    for (&c, ens) in &report.ensembles {
        scores[c] = Some(ensemble_confidence(outputs, ens, mode)?);
    }
    Ok(scores)
}

/// Highest-confidence covered class; ties go to the lowest class index.
pub fn predict(outputs: &[ModelOutput], report: &SelectionReport, mode: ConfidenceMode) -> Result<Prediction, ReuseError> {
    let scores = expert_scores(outputs, report, mode)?;
    let (class_index, confidence) = pick(&scores).ok_or(ReuseError::NoCoveredClasses)?;
    Ok(Prediction {
        class_index,
        class_text: report.class_texts[class_index].clone(),
        confidence,
        per_class_scores: scores,
        route: Route::Experts,
    })
}

/// Covered classes share the generalist's mass on them in proportion to the
/// expert confidences; uncovered classes keep the generalist's probability.
pub fn predict_with_patch(
    outputs: &[ModelOutput],
    report: &SelectionReport,
    generalist: &GeneralistOutput,
    partition: &PatchPartition,
    mode: ConfidenceMode,
) -> Result<Prediction, ReuseError> {
    partition.check(report)?;
    let n = report.num_classes();
    if generalist.probabilities.len() != n {
        return Err(ReuseError::PartitionMismatch(format!(
            "generalist has {} classes, task has {n}",
            generalist.probabilities.len()
        )));
    }
    if partition.generalist_classes.is_empty() {
        return predict(outputs, report, mode);
    }
    if partition.expert_classes.is_empty() {
        let g = &generalist.probabilities;
        let c = argmax(g).expect("task has classes");
        return Ok(Prediction {
            class_index: c,
            class_text: report.class_texts[c].clone(),
            confidence: g[c],
            per_class_scores: g.iter().copied().map(Some).collect(),
            route: Route::Generalist,
        });
    }

    let raw = expert_scores(outputs, report, mode)?;
    let experts = &partition.expert_classes;
    let conf: Vec<f64> = experts.iter().map(|&c| raw[c].expect("expert class has an ensemble")).collect();
    let shares: Vec<f64> = match mode {
        ConfidenceMode::Prob => {
            let total: f64 = conf.iter().sum();
            if total > 0.0 {
                conf.iter().map(|v| v / total).collect()
            } else {
                vec![1.0 / conf.len() as f64; conf.len()]
            }
        }
        // raw logit confidences can be negative
        ConfidenceMode::Logit => softmax(&conf),
    };
    let mass: f64 = experts.iter().map(|&c| generalist.probabilities[c]).sum();

    let mut scores: Vec<Option<f64>> = generalist.probabilities.iter().copied().map(Some).collect();
    for (&c, s) in experts.iter().zip(&shares) {
        scores[c] = Some(mass * s);
    }
    let (class_index, confidence) = pick(&scores).expect("task has classes");
    let route = if report.ensembles.contains_key(&class_index) {
        Route::Experts
    } else {
        Route::Generalist
    };
    Ok(Prediction {
        class_index,
        class_text: report.class_texts[class_index].clone(),
        confidence,
        per_class_scores: scores,
        route,
    })
}
