// SPDX-License-Identifier: MIT OR Apache-2.0

//! Change-point and coefficient accuracy metrics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Hausdorff distance between two finite sets of times. Zero when both are
/// empty, infinite when exactly one is.
pub fn hausdorff_distance(a: &[usize], b: &[usize]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return f64::INFINITY,
        _ => {}
    }
    let directed = |from: &[usize], to: &[usize]| {
        from.iter()
            .map(|&x| to.iter().map(|&y| x.abs_diff(y)).min().expect("non-empty"))
            .max()
            .expect("non-empty") as f64
    };
    directed(a, b).max(directed(b, a))
}

/// Outcome for one true change point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakOutcome {
    pub truth: usize,
    /// Closest estimate inside the truth's acceptance interval.
    pub matched: Option<usize>,
    pub error: Option<f64>,
}

impl BreakOutcome {
    pub fn selected(&self) -> bool {
        self.matched.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpcpMetrics {
    pub tpcp_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub breaks: Vec<BreakOutcome>,
}

/// Interval `[t_j - (t_j - t_{j-1})/5, t_j + (t_{j+1} - t_j)/5]` for every
/// true change point, with `t_0 = 1` and `t_{m+1} = n + 1`.
pub fn acceptance_intervals(truth: &[usize], n: usize) -> Vec<(f64, f64)> {
    let mut ext = Vec::with_capacity(truth.len() + 2);
    ext.push(1usize);
    ext.extend_from_slice(truth);
    ext.push(n + 1);
    (1..=truth.len())
        .map(|j| {
            let t = ext[j] as f64;
            (
                t - (t - ext[j - 1] as f64) / 5.0,
                t + (ext[j + 1] as f64 - t) / 5.0,
            )
        })
        .collect()
}

pub fn tpcp_metrics(estimated: &[usize], truth: &[usize], n: usize) -> TpcpMetrics {
    let breaks: Vec<BreakOutcome> = truth
        .iter()
        .zip(acceptance_intervals(truth, n))
        .map(|(&t, (lo, hi))| {
            let matched = estimated
                .iter()
                .copied()
                .filter(|&e| (e as f64) >= lo && (e as f64) <= hi)
                .min_by_key(|&e| (e.abs_diff(t), e));
            BreakOutcome {
                truth: t,
                matched,
                error: matched.map(|e| e.abs_diff(t) as f64),
            }
        })
        .collect();
    let tpcp_count = breaks.iter().filter(|b| b.selected()).count();
    let precision = if estimated.is_empty() {
        0.0
    } else {
        (tpcp_count as f64 / estimated.len() as f64).min(1.0)
    };
    let recall = if truth.is_empty() {
        0.0
    } else {
        tpcp_count as f64 / truth.len() as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    TpcpMetrics {
        tpcp_count,
        precision,
        recall,
        f1,
        breaks,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationMetrics {
    /// Relative Frobenius error per segment; `None` when the truth is zero.
    pub ree: Vec<Option<f64>>,
    pub tpr: f64,
    pub fpr: f64,
}

/// Coefficient accuracy when the estimated and true segment counts agree.
/// Entries listed in `mask` (response `l` excludes predictor `mask[l]`) are skipped.
pub fn estimation_metrics(
    estimated: &[DMatrix<f64>],
    truth: &[DMatrix<f64>],
    mask: Option<&[usize]>,
) -> Option<EstimationMetrics> {
    if estimated.len() != truth.len() || estimated.iter().zip(truth).any(|(a, b)| a.shape() != b.shape()) {
        return None;
    }
    let ree = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| {
            let norm = t.norm();
            (norm > 0.0).then(|| (e - t).norm() / norm)
        })
        .collect();
    let (mut tp, mut pos, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (e, t) in estimated.iter().zip(truth) {
        for l in 0..t.nrows() {
            for c in 0..t.ncols() {
                if mask.is_some_and(|m| m[l] == c) {
                    continue;
                }
                if t[(l, c)] != 0.0 {
                    pos += 1;
                    tp += usize::from(e[(l, c)] != 0.0);
                } else {
                    neg += 1;
                    fp += usize::from(e[(l, c)] != 0.0);
                }
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Some(EstimationMetrics {
        ree,
        tpr: ratio(tp, pos),
        fpr: ratio(fp, neg),
    })
}
