//! Exhaustive reference minimizer for small combination problems, and rank
//! statistics for benchmark curves.

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::chco::HeadClassMatrix;
use crate::matrix::Matrix;

pub const MAX_GRID_HEADS: usize = 4;
pub const MAX_GRID_CLASSES: usize = 3;
pub const MIN_GRID_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub x: Matrix,
    pub loss: f64,
    /// Number of feasible grid matrices the minimum ranges over.
    pub grid_points: u128,
}

/// Loss of one class's predictor for an integer grid column `k` (weights `k·step`).
/// Written out directly from the definition, independent of the solver's code.
fn column_loss(p: &HeadClassMatrix, class: usize, k: &[usize], step: f64) -> f64 {
    let (heads, classes) = p.p.shape();
    let clamp = |v: f64| v.max(1e-12).min(1.0 - 1e-12);
    let mut on_target = 0.0;
    let mut off_target = 0.0;
    for other in 0..classes {
        let mut q = 0.0;
        for h in 0..heads {
            q += p.p.get(h, other) * (k[h] as f64 * step);
        }
        if other == class {
            on_target = clamp(q).ln();
        } else {
            off_target += (1.0 - clamp(q)).ln();
        }
    }
    -(on_target + off_target / (classes - 1) as f64)
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

struct Grid {
    heads: usize,
    base: usize,
    size: usize,
}

impl Grid {
    fn decode(&self, mut idx: usize, out: &mut [usize]) {
        for d in out.iter_mut().take(self.heads) {
            *d = idx % self.base;
            idx /= self.base;
        }
    }

    fn encode(&self, digits: &[usize]) -> usize {
        digits.iter().rev().fold(0, |acc, &d| acc * self.base + d)
    }

    /// Index of `top − k` per digit.
    fn complement(&self, k: &[usize], top: &[usize], scratch: &mut [usize]) -> usize {
        for h in 0..self.heads {
            scratch[h] = top[h] - k[h];
        }
        self.encode(scratch)
    }

    /// `out[i] = min over j ≤ i (digit-wise) of values[j]`, with the arg.
    fn box_min(&self, values: &[f64]) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = values.iter().copied().zip(0..).collect();
        let mut stride = 1;
        for _ in 0..self.heads {
            for i in 0..self.size {
                if (i / stride) % self.base > 0 {
                    let prev = best[i - stride];
                    if prev.0 < best[i].0 {
                        best[i] = prev;
                    }
                }
            }
            stride *= self.base;
        }
        best
    }
}

/// Exact minimum of the total loss over the feasible grid with spacing `step`.
///
/// The loss separates over columns while the row caps couple them, so the
/// search fixes the first column, bounds the rest by their best values inside
/// the remaining caps, and visits first columns in order of that bound.
pub fn grid_oracle_chco(p: &HeadClassMatrix, step: f64) -> Result<GridOptimum, SynthError> {
    let (heads, classes) = p.p.shape();
    if heads > MAX_GRID_HEADS || classes > MAX_GRID_CLASSES || step < MIN_GRID_STEP {
        return Err(SynthError::InstanceTooLarge(format!(
            "{heads} heads, {classes} classes, step {step}"
        )));
    }
    if classes < 2 || heads == 0 {
        return Err(SynthError::InvalidConfig("grid oracle needs ≥ 2 classes and ≥ 1 head".into()));
    }
    let n = (1.0 / step).round() as usize;
    if ((n as f64) * step - 1.0).abs() > 1e-9 {
        return Err(SynthError::InvalidConfig(format!("step {step} does not divide 1")));
    }
    let grid = Grid {
        heads,
        base: n + 1,
        size: (n + 1).pow(heads as u32),
    };

    let mut digits = vec![0; heads];
    let losses: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            (0..grid.size)
                .map(|i| {
                    grid.decode(i, &mut digits);
                    column_loss(p, c, &digits, step)
                })
                .collect()
        })
        .collect();
    let box_mins: Vec<Vec<(f64, usize)>> = losses.iter().map(|l| grid.box_min(l)).collect();
    let full = vec![n; heads];
    let mut scratch = vec![0; heads];

    // bound for each first column: its loss plus every other class's best under the leftover caps
    let mut order: Vec<(f64, usize)> = (0..grid.size)
        .map(|i| {
            grid.decode(i, &mut digits);
            let rest = grid.complement(&digits, &full, &mut scratch);
            let bound = losses[0][i] + (1..classes).map(|c| box_mins[c][rest].0).sum::<f64>();
            (bound, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut best = (f64::INFINITY, Vec::new());
    let mut caps = vec![0; heads];
    let mut k2 = vec![0; heads];
    for &(bound, first) in &order {
        if bound >= best.0 {
            break;
        }
        grid.decode(first, &mut digits);
        for h in 0..heads {
            caps[h] = n - digits[h];
        }
        let (value, columns) = if classes == 2 {
            let idx = grid.encode(&caps);
            let (v, arg) = box_mins[1][idx];
            (losses[0][first] + v, vec![first, arg])
        } else {
            // enumerate the second column inside the caps, third takes the best of what is left
            let mut inner = (f64::INFINITY, 0, 0);
            let count: usize = caps.iter().map(|c| c + 1).product();
            for j in 0..count {
                let mut r = j;
                for h in 0..heads {
                    k2[h] = r % (caps[h] + 1);
                    r /= caps[h] + 1;
                }
                let second = grid.encode(&k2);
                let rest = grid.complement(&k2, &caps, &mut scratch);
                let (v3, arg3) = box_mins[2][rest];
                let v = losses[1][second] + v3;
                if v < inner.0 {
                    inner = (v, second, arg3);
                }
            }
            (losses[0][first] + inner.0, vec![first, inner.1, inner.2])
        };
        if value < best.0 {
            best = (value, columns);
        }
    }

    let mut x = Matrix::zeros(heads, classes);
    for (c, &col) in best.1.iter().enumerate() {
        grid.decode(col, &mut digits);
        for h in 0..heads {
            x.set(h, c, digits[h] as f64 * step);
        }
    }
    let per_row = binomial((n + classes) as u128, classes as u128);
    Ok(GridOptimum {
        x,
        loss: best.0,
        grid_points: per_row.pow(heads as u32),
    })
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // tied block shares the average rank
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
