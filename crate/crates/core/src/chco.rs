//! Classification-head combination: assign each target class a mixture of a
//! model's heads that best separates it from the other target classes.
//!
//! With `p[h][c]` the softmax over heads of the label score at node `c` and
//! `x[h][c]` the share of head `h` given to class `c`, the combined predictor
//! for `c` outputs `q[c][c'] = Σ_h p[h][c'] · x[h][c]` on class `c'`. Its
//! one-vs-rest loss is
//!
//! ```text
//! L_c = −[ log q[c][c] + 1/(|Y|−1) · Σ_{c'≠c} log(1 − q[c][c']) ]
//! ```
//!
//! and the total `L = Σ_c L_c` is minimized subject to `x ≥ 0` and
//! `Σ_c x[h][c] ≤ 1` for every head. The solver sweeps heads cyclically,
//! taking a backtracked gradient step on one row at a time and projecting it
//! back onto the capped simplex.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelling::ModelLabel;
use crate::matrix::{softmax, Matrix};

/// Probabilities entering a logarithm are clamped to `[LOG_CLAMP, 1 − LOG_CLAMP]`.
pub const LOG_CLAMP: f64 = 1e-12;

/// Slack allowed on row sums and bounds when checking feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChcoError {
    #[error("label has no score for node `{0}`")]
    MissingNodeScore(String),
    #[error("label score for node `{0}` is not finite")]
    DegenerateLabel(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("a single-class task has no one-vs-rest loss")]
    SingleClassTask,
    #[error("model has no heads")]
    NoHeads,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

#[inline]
fn clamp_prob(v: f64) -> f64 {
    v.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)
}

/// Column-stochastic head × class matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadClassMatrix {
    pub p: Matrix,
    pub class_order: Vec<String>,
}

impl HeadClassMatrix {
    /// One score vector (over heads) per target class.
    pub fn from_class_scores(class_order: Vec<String>, scores: &[Vec<f64>]) -> Result<Self, ChcoError> {
        if scores.len() != class_order.len() {
            return Err(ChcoError::ShapeMismatch("one score vector per class required".into()));
        }
        let heads = scores.first().map_or(0, Vec::len);
        if heads == 0 {
            return Err(ChcoError::NoHeads);
        }
        let mut p = Matrix::zeros(heads, scores.len());
        for (c, (s, name)) in scores.iter().zip(&class_order).enumerate() {
            if s.len() != heads {
                return Err(ChcoError::ShapeMismatch(format!("class `{name}` has {} heads", s.len())));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(ChcoError::DegenerateLabel(name.clone()));
            }
            for (h, v) in softmax(s).into_iter().enumerate() {
                p.set(h, c, v);
            }
        }
        Ok(Self { p, class_order })
    }

    pub fn heads(&self) -> usize {
        self.p.rows()
    }

    pub fn classes(&self) -> usize {
        self.p.cols()
    }
}

/// Softmax over heads of the label score at each target node.
pub fn head_class_probabilities(label: &ModelLabel, target_nodes: &[String]) -> Result<HeadClassMatrix, ChcoError> {
    let scores = target_nodes
        .iter()
        .map(|n| {
            label
                .score(n)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| ChcoError::MissingNodeScore(n.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    HeadClassMatrix::from_class_scores(target_nodes.to_vec(), &scores)
}

/// True when `x` satisfies `0 ≤ x ≤ 1` and every row sums to at most one.
pub fn is_feasible(x: &Matrix) -> bool {
    max_violation(x) <= FEASIBILITY_TOL
}

/// Largest amount by which `x` breaks a bound or row-sum constraint.
pub fn max_violation(x: &Matrix) -> f64 {
    let mut worst: f64 = 0.0;
    for h in 0..x.rows() {
        let row = x.row(h);
        worst = worst.max(row.iter().sum::<f64>() - 1.0);
        for &v in row {
            worst = worst.max(-v).max(v - 1.0);
        }
    }
    worst
}

fn check_shapes(p: &HeadClassMatrix, x: &Matrix) -> Result<(), ChcoError> {
    if p.p.shape() != x.shape() {
        return Err(ChcoError::ShapeMismatch(format!(
            "p is {:?} but x is {:?}",
            p.p.shape(),
            x.shape()
        )));
    }
    Ok(())
}

/// `q[c][c'] = Σ_h p[h][c'] · x[h][c]`.
pub fn predictor_probabilities(p: &HeadClassMatrix, x: &Matrix) -> Result<Matrix, ChcoError> {
    check_shapes(p, x)?;
    let (heads, classes) = x.shape();
    let mut q = Matrix::zeros(classes, classes);
    for h in 0..heads {
        let (prow, xrow) = (p.p.row(h), x.row(h));
        for (c, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let qrow = q.row_mut(c);
            for (qv, &pv) in qrow.iter_mut().zip(prow) {
                *qv += pv * xv;
            }
        }
    }
    Ok(q)
}

fn loss_from_q(q: &Matrix) -> Vec<f64> {
    let n = q.rows();
    let rest = 1.0 / (n as f64 - 1.0);
    (0..n)
        .map(|c| {
            let row = q.row(c);
            let mut off = 0.0;
            for (c2, &v) in row.iter().enumerate() {
                if c2 != c {
                    off += (1.0 - clamp_prob(v)).ln();
                }
            }
            -(clamp_prob(row[c]).ln() + rest * off)
        })
        .collect()
}

/// Per-class losses and their sum.
pub fn discriminative_loss(p: &HeadClassMatrix, x: &Matrix) -> Result<(Vec<f64>, f64), ChcoError> {
    if p.classes() < 2 {
        return Err(ChcoError::SingleClassTask);
    }
    let q = predictor_probabilities(p, x)?;
    let losses = loss_from_q(&q);
    let total = losses.iter().sum();
    Ok((losses, total))
}

fn gradient_from_q(p: &HeadClassMatrix, q: &Matrix, h: usize) -> Vec<f64> {
    let n = q.rows();
    let rest = 1.0 / (n as f64 - 1.0);
    let prow = p.p.row(h);
    (0..n)
        .map(|c| {
            let qrow = q.row(c);
            let mut off = 0.0;
            for c2 in 0..n {
                if c2 != c {
                    off += prow[c2] / (1.0 - clamp_prob(qrow[c2]));
                }
            }
            rest * off - prow[c] / clamp_prob(qrow[c])
        })
        .collect()
}

/// Gradient of the total loss with respect to row `h` of `x`.
pub fn loss_gradient_row(p: &HeadClassMatrix, x: &Matrix, h: usize) -> Result<Vec<f64>, ChcoError> {
    if p.classes() < 2 {
        return Err(ChcoError::SingleClassTask);
    }
    if h >= p.heads() {
        return Err(ChcoError::ShapeMismatch(format!("head {h} out of range")));
    }
    let q = predictor_probabilities(p, x)?;
    Ok(gradient_from_q(p, &q, h))
}

/// Euclidean projection onto `{u ≥ 0, Σu ≤ 1}`.
///
/// Clipping negatives is the answer when the clipped vector already sums to
/// at most one; otherwise the sum constraint is active and the result is the
/// sort-based projection onto the probability simplex.
pub fn project_row_to_simplex(v: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= 1.0 {
        return clipped;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Every entry `1/|Y|`.
    #[default]
    Uniform,
    /// `x[h][c] = p[h][c]`, with rows rescaled to sum at most one.
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChcoConfig {
    pub learning_rate: f64,
    /// Full passes over all heads.
    pub max_sweeps: usize,
    /// Stop once the relative change of the total loss over a sweep drops below this.
    pub rel_tolerance: f64,
    pub backtrack_factor: f64,
    pub max_halvings: usize,
    pub init: InitMode,
    /// Keep the loss after every accepted row step in [`ChcoResult::step_losses`].
    pub record_steps: bool,
}

impl Default for ChcoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 10.0,
            max_sweeps: 200,
            rel_tolerance: 1e-8,
            backtrack_factor: 0.5,
            max_halvings: 20,
            init: InitMode::Uniform,
            record_steps: false,
        }
    }
}

impl ChcoConfig {
    pub fn validate(&self) -> Result<(), ChcoError> {
        let bad = |m: &str| Err(ChcoError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be positive");
        }
        if !(self.rel_tolerance > 0.0) {
            return bad("rel_tolerance must be positive");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub total_loss: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChcoResult {
    pub x: Matrix,
    pub class_losses: Vec<f64>,
    pub total_loss: f64,
    pub sweeps_used: usize,
    pub converged: bool,
    /// One record per completed sweep.
    #[serde(default)]
    pub sweeps: Vec<SweepRecord>,
    /// Loss after the initial point and after every accepted step, when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub step_losses: Vec<f64>,
}

impl ChcoResult {
    /// Column `c` of the combination matrix.
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.x.column(c)
    }

    /// Heads carrying more than `threshold` weight for class `c`.
    pub fn active_heads(&self, c: usize, threshold: f64) -> usize {
        self.column(c).into_iter().filter(|&v| v > threshold).count()
    }
}

fn initial_x(p: &HeadClassMatrix, init: InitMode) -> Matrix {
    let (heads, classes) = p.p.shape();
    match init {
        InitMode::Uniform => Matrix::filled(heads, classes, 1.0 / classes as f64),
        InitMode::Proportional => {
            let mut x = p.p.clone();
            for h in 0..heads {
                let row = x.row_mut(h);
                let s: f64 = row.iter().sum();
                if s > 1.0 {
                    row.iter_mut().for_each(|v| *v /= s);
                }
            }
            x
        }
    }
}

/// Solves the combination program for one model and the given target nodes.
pub fn solve(label: &ModelLabel, target_nodes: &[String], cfg: &ChcoConfig) -> Result<ChcoResult, ChcoError> {
    let p = head_class_probabilities(label, target_nodes)?;
    solve_matrix(&p, cfg)
}

/// Alternating projected gradient descent on the rows of `x`.
pub fn solve_matrix(p: &HeadClassMatrix, cfg: &ChcoConfig) -> Result<ChcoResult, ChcoError> {
    cfg.validate()?;
    let (heads, classes) = p.p.shape();
    if classes < 2 {
        return Err(ChcoError::SingleClassTask);
    }
    if heads == 0 {
        return Err(ChcoError::NoHeads);
    }

    let mut x = initial_x(p, cfg.init);
    let mut q = predictor_probabilities(p, &x)?;
    let mut current: f64 = loss_from_q(&q).iter().sum();
    let mut step_losses = Vec::new();
    if cfg.record_steps {
        step_losses.push(current);
    }

    let mut sweeps = Vec::new();
    let mut converged = false;
    let mut candidate_q = q.clone();
    for sweep in 0..cfg.max_sweeps {
        let start = current;
        for h in 0..heads {
            let grad = gradient_from_q(p, &q, h);
            let old_row = x.row(h).to_vec();
            let mut eta = cfg.learning_rate;
            for _ in 0..=cfg.max_halvings {
                let stepped: Vec<f64> = old_row.iter().zip(&grad).map(|(v, g)| v - eta * g).collect();
                let new_row = project_row_to_simplex(&stepped);
                if new_row == old_row {
                    break;
                }
                // q changes by p[h][·] ⊗ Δ for the moved row
                candidate_q.clone_from(&q);
                let prow = p.p.row(h);
                for (c, (nv, ov)) in new_row.iter().zip(&old_row).enumerate() {
                    let delta = nv - ov;
                    if delta != 0.0 {
                        for (qv, &pv) in candidate_q.row_mut(c).iter_mut().zip(prow) {
                            *qv += pv * delta;
                        }
                    }
                }
                let candidate: f64 = loss_from_q(&candidate_q).iter().sum();
                if candidate <= current {
                    x.row_mut(h).copy_from_slice(&new_row);
                    std::mem::swap(&mut q, &mut candidate_q);
                    current = candidate;
                    if cfg.record_steps {
                        step_losses.push(current);
                    }
                    break;
                }
                eta *= cfg.backtrack_factor;
            }
        }
        sweeps.push(SweepRecord {
            sweep,
            total_loss: current,
            max_violation: max_violation(&x),
        });
        let rel = (start - current).abs() / start.abs().max(f64::MIN_POSITIVE);
        if rel < cfg.rel_tolerance {
            converged = true;
            break;
        }
    }

    let (class_losses, total_loss) = discriminative_loss(p, &x)?;
    Ok(ChcoResult {
        x,
        class_losses,
        total_loss,
        sweeps_used: sweeps.len(),
        converged,
        sweeps,
        step_losses,
    })
}

/// Loss of a single head used alone as the predictor for class `c`.
pub fn single_head_loss(p: &HeadClassMatrix, h: usize, c: usize) -> f64 {
    let n = p.classes();
    let row = p.p.row(h);
    let off: f64 = (0..n)
        .filter(|&c2| c2 != c)
        .map(|c2| (1.0 - clamp_prob(row[c2])).ln())
        .sum();
    -(clamp_prob(row[c]).ln() + off / (n as f64 - 1.0))
}

/// Baseline: each class takes the one head with the lowest loss. Several
/// classes may pick the same head.
pub fn heuristic_single_head(label: &ModelLabel, target_nodes: &[String]) -> Result<ChcoResult, ChcoError> {
    let p = head_class_probabilities(label, target_nodes)?;
    heuristic_single_head_matrix(&p)
}

pub fn heuristic_single_head_matrix(p: &HeadClassMatrix) -> Result<ChcoResult, ChcoError> {
    let (heads, classes) = p.p.shape();
    if classes < 2 {
        return Err(ChcoError::SingleClassTask);
    }
    let mut x = Matrix::zeros(heads, classes);
    let mut class_losses = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut best = (0, single_head_loss(p, 0, c));
        for h in 1..heads {
            let l = single_head_loss(p, h, c);
            if l < best.1 {
                best = (h, l);
            }
        }
        x.set(best.0, c, 1.0);
        class_losses.push(best.1);
    }
    let total_loss = class_losses.iter().sum();
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
