// SPDX-License-Identifier: MIT OR Apache-2.0

//! Optimality certificates for the block fused lasso, independent of the
//! proximal operator and of the solver's stopping rule.
//!
//! On one coordinate path `b_1..b_k` (cumulative coordinates) with smooth
//! gradient `g`, optimality means `-g = D'z + s` with `z_j` a subgradient of
//! `w_tv |b_j - b_{j-1}|` (`b_0 = 0`) and `s_j` a subgradient of `w_l1 |b_j|`.
//! Since `D'z` telescopes, `z_j = sum_{i>=j} (-g_i - s_i)`; the feasible set of
//! each tail sum is an interval that can be propagated from the last block.

use crate::blocks::{adjoint_residual, predict, BlockPartition, ThetaStack};
use crate::model::Dataset;

fn subgradient_set(v: f64, w: f64) -> (f64, f64) {
    if v > 0.0 {
        (w, w)
    } else if v < 0.0 {
        (-w, -w)
    } else {
        (-w, w)
    }
}

fn feasible(grad: &[f64], b: &[f64], w_tv: f64, w_l1: f64, eps: f64) -> bool {
    let k = b.len();
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for j in (0..k).rev() {
        let (s_lo, s_hi) = subgradient_set(b[j], w_l1);
        // z_j = z_{j+1} - g_j - s_j
        lo = lo - grad[j] - (s_hi + eps);
        hi = hi - grad[j] - (s_lo - eps);
        let prev = if j == 0 { 0.0 } else { b[j - 1] };
        let (a_lo, a_hi) = subgradient_set(b[j] - prev, w_tv);
        lo = lo.max(a_lo - eps);
        hi = hi.min(a_hi + eps);
        if lo > hi {
            return false;
        }
    }
    true
}

/// Smallest per-constraint slack under which `b` satisfies the optimality
/// conditions of `f(b) + w_tv * anchored-TV(b) + w_l1 * ||b||_1`, given
/// `grad = f'(b)`. Zero (up to bisection accuracy) at the exact minimizer.
pub fn fused_path_kkt_residual(grad: &[f64], b: &[f64], w_tv: f64, w_l1: f64) -> f64 {
    assert_eq!(grad.len(), b.len());
    if feasible(grad, b, w_tv, w_l1, 0.0) {
        return 0.0;
    }
    let mut hi = grad.iter().map(|g| g.abs()).sum::<f64>() + w_tv + w_l1 + 1.0;
    while !feasible(grad, b, w_tv, w_l1, hi) {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if feasible(grad, b, w_tv, w_l1, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    hi
}

/// Largest coordinate-path KKT residual of a block fused lasso solution with
/// loss `(1/n)||y - Z theta||^2`. Masked coordinates are skipped.
pub fn block_fused_lasso_kkt_residual(
    dataset: &Dataset,
    partition: &BlockPartition,
    theta: &ThetaStack,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let fitted = predict(dataset, partition, theta).expect("shapes checked by caller");
    let resid = dataset.y() - fitted;
    let theta_grad = adjoint_residual(dataset, partition, &resid).expect("shapes checked by caller");
    let k = partition.blocks();
    let mut worst = 0.0f64;
    for l in 0..dataset.p_y() {
        for c in 0..dataset.p_x() {
            if dataset.is_masked(l, c) {
                continue;
            }
            // gradient w.r.t. B_i is dtheta_i - dtheta_{i+1}
            let grad: Vec<f64> = (0..k)
                .map(|i| {
                    let next = if i + 1 < k { theta_grad[i + 1][(l, c)] } else { 0.0 };
                    theta_grad[i][(l, c)] - next
                })
                .collect();
            let path: Vec<f64> = theta.cumulative().iter().map(|b| b[(l, c)]).collect();
            worst = worst.max(fused_path_kkt_residual(&grad, &path, lambda1, lambda2));
        }
    }
    worst
}
