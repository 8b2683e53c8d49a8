// SPDX-License-Identifier: MIT OR Apache-2.0

//! Segment coefficients from partial sums of the block jumps, exhaustive
//! search for one change point per cluster, and element-wise thresholding of
//! the segment coefficients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::blocks::ThetaStack;
use crate::model::{segment_rows, Dataset};
use crate::screening::{count_nonzero, gaussian_bic, ClusterSet};
use crate::solver::FusedLassoFit;

/// Segment estimates `B_j = sum_{i <= U_j} Theta_i`, where `U_j` is the
/// midpoint (1-based, rounded down) between the last block of the previous
/// cluster and the first block of the next one. The first and last blocks act
/// as outer anchors. Every jump enters the sum, however small.
pub fn midpoint_estimates(theta: &ThetaStack, block_clusters: &[Vec<usize>]) -> Vec<DMatrix<f64>> {
    let k = theta.blocks();
    let mut anchors: Vec<(usize, usize)> = Vec::with_capacity(block_clusters.len() + 2);
    anchors.push((1, 1));
    for c in block_clusters {
        let lo = c.iter().min().expect("clusters are non-empty") + 1;
        let hi = c.iter().max().expect("clusters are non-empty") + 1;
        anchors.push((lo, hi));
    }
    anchors.push((k, k));
    anchors
        .windows(2)
        .map(|w| {
            let u = (w[0].1 + w[1].0) / 2;
            theta.cumulative()[u.max(1) - 1].clone()
        })
        .collect()
}

pub fn local_coefficients(fit: &FusedLassoFit, clusters: &ClusterSet) -> Vec<DMatrix<f64>> {
    midpoint_estimates(&fit.theta, &clusters.block_clusters)
}

/// Search bounds for one cluster; times are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchWindow {
    pub cluster: Vec<usize>,
    /// Exclusive bounds of the admissible change points.
    pub lower: usize,
    pub upper: usize,
    /// Observations `[data_start, data_end)` entering the two-sided loss.
    pub data_start: usize,
    pub data_end: usize,
}

impl SearchWindow {
    pub fn new(cluster: &[usize], block_size: usize, n: usize) -> Self {
        let lo = *cluster.iter().min().expect("clusters are non-empty");
        let hi = *cluster.iter().max().expect("clusters are non-empty");
        let (lower, upper) = if lo == hi {
            (lo.saturating_sub(block_size), hi + block_size)
        } else {
            (lo, hi)
        };
        Self {
            cluster: cluster.to_vec(),
            lower,
            upper,
            data_start: lo.saturating_sub(block_size).max(1),
            data_end: (hi + block_size).min(n + 1),
        }
    }

    /// Admissible change points after clipping to `[2, n]` and to the data range.
    pub fn candidates(&self, n: usize) -> std::ops::RangeInclusive<usize> {
        let first = (self.lower + 1).max(2).max(self.data_start);
        let last = self.upper.saturating_sub(1).min(n).min(self.data_end);
        first..=last
    }

    pub fn is_empty(&self, n: usize) -> bool {
        self.candidates(n).is_empty()
    }
}

/// Minimizer of the two-sided loss inside `window`, ties to the smallest time.
/// `None` when the window is empty.
pub fn search_window(
    dataset: &Dataset,
    window: &SearchWindow,
    left: &DMatrix<f64>,
    right: &DMatrix<f64>,
) -> Option<usize> {
    let n = dataset.n();
    let range = window.candidates(n);
    if range.is_empty() {
        return None;
    }
    let rows = (window.data_start - 1)..(window.data_end - 1);
    let left_loss = dataset.row_losses(rows.clone(), left);
    let right_loss = dataset.row_losses(rows, right);
    // prefix[i]: left loss of the first i rows; suffix[i]: right loss from row i on
    let len = left_loss.len();
    let mut prefix = vec![0.0; len + 1];
    for i in 0..len {
        prefix[i + 1] = prefix[i] + left_loss[i];
    }
    let mut suffix = vec![0.0; len + 1];
    for i in (0..len).rev() {
        suffix[i] = suffix[i + 1] + right_loss[i];
    }
    let mut best: Option<(f64, usize)> = None;
    for s in range {
        let cut = s - window.data_start;
        let loss = prefix[cut] + suffix[cut];
        if best.map_or(true, |(b, _)| loss < b) {
            best = Some((loss, s));
        }
    }
    best.map(|(_, s)| s)
}

/// One change point per cluster. `coeffs` holds the `clusters.len() + 1`
/// segment estimates; cluster `j` separates `coeffs[j]` from `coeffs[j + 1]`.
/// Clusters whose window is empty, or whose minimizer does not exceed the
/// previous change point, yield `None`.
pub fn exhaustive_search(
    dataset: &Dataset,
    clusters: &ClusterSet,
    coeffs: &[DMatrix<f64>],
    block_size: usize,
) -> Vec<Option<usize>> {
    let n = dataset.n();
    let mut out = Vec::with_capacity(clusters.clusters.len());
    let mut last = 1;
    for (j, cluster) in clusters.clusters.iter().enumerate() {
        let window = SearchWindow::new(cluster, block_size, n);
        let found = search_window(dataset, &window, &coeffs[j], &coeffs[j + 1]).filter(|&s| s > last);
        if let Some(s) = found {
            last = s;
        }
        out.push(found);
    }
    out
}

pub const THRESHOLD_GRID_SMALL: usize = 25;
pub const THRESHOLD_GRID_LARGE: usize = 50;

/// Hard-threshold `b`: entries with `|b| <= eta` become zero.
pub fn hard_threshold(b: &DMatrix<f64>, eta: f64) -> DMatrix<f64> {
    b.map(|v| if v.abs() <= eta { 0.0 } else { v })
}

/// Log-spaced thresholds from the smallest value zeroing `b` down to just
/// below its smallest nonzero magnitude. Empty when `b` is zero.
pub fn threshold_grid(b: &DMatrix<f64>) -> Vec<f64> {
    let mags: Vec<f64> = b.iter().map(|v| v.abs()).filter(|v| *v > 0.0).collect();
    if mags.is_empty() {
        return Vec::new();
    }
    let eta_max = mags.iter().copied().fold(0.0, f64::max);
    let eta_min = mags.iter().copied().fold(f64::INFINITY, f64::min) * (1.0 - 1e-9);
    let count = if eta_max / eta_min < 1e4 {
        THRESHOLD_GRID_SMALL
    } else {
        THRESHOLD_GRID_LARGE
    };
    let ratio = eta_min / eta_max;
    (0..count)
        .map(|j| {
            if j + 1 == count {
                eta_min
            } else {
                eta_max * ratio.powf(j as f64 / (count - 1) as f64)
            }
        })
        .collect()
}

/// Per-segment BIC with the segment length as sample size.
pub fn segment_bic(dataset: &Dataset, rows: std::ops::Range<usize>, b: &DMatrix<f64>) -> f64 {
    let len = rows.len();
    let rss = dataset.rss(rows, b);
    gaussian_bic(rss, len * dataset.p_y(), count_nonzero(b), (len as f64).ln())
}

/// Threshold each segment estimate at the BIC-minimizing grid value (ties
/// keep the larger threshold). Returns the thresholded matrices and thresholds.
pub fn threshold_coefficients(
    coeffs: &[DMatrix<f64>],
    dataset: &Dataset,
    change_points: &[usize],
) -> (Vec<DMatrix<f64>>, Vec<f64>) {
    let segments = segment_rows(change_points, dataset.n());
    assert_eq!(segments.len(), coeffs.len(), "one estimate per segment");
    let mut out = Vec::with_capacity(coeffs.len());
    let mut etas = Vec::with_capacity(coeffs.len());
    for (b, rows) in coeffs.iter().zip(segments) {
        let grid = threshold_grid(b);
        let mut best: Option<(f64, f64, DMatrix<f64>)> = None;
        for eta in grid {
            let cand = hard_threshold(b, eta);
            let bic = segment_bic(dataset, rows.clone(), &cand);
            if best.as_ref().map_or(true, |(v, _, _)| bic < *v) {
                best = Some((bic, eta, cand));
            }
        }
        match best {
            Some((_, eta, cand)) => {
                out.push(cand);
                etas.push(eta);
            }
            None => {
                out.push(b.clone());
                etas.push(0.0);
            }
        }
    }
    (out, etas)
}
