// SPDX-License-Identifier: MIT OR Apache-2.0

//! Block fused lasso solver and the validation-based choice of its penalties.
//!
//! The objective is
//!
//! ```text
//! (1/n) ||y - Z theta||^2 + lambda1 ||theta||_1 + lambda2 sum_i ||B_i||_1,   B_i = sum_{j<=i} Theta_j
//! ```
//!
//! and is minimized over the cumulative coordinates `B_i`. There the loss
//! splits into one quadratic per block, `(1/n) sum_{t in block i} ||y_t - B_i x_t||^2`,
//! and the penalty is an anchored total variation plus an l1 term along each
//! scalar coordinate path, whose prox is exact (see [`crate::prox`]).
//! Iterations use monotone FISTA with function-value restart.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::blocks::{BlockPartition, ThetaStack};
use crate::error::{Result, TbflError};
use crate::model::Dataset;
use crate::prox::{fused_path_penalty, FusedPathProx};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the gradient-mapping residual `L||z - y||` is at most `tol (1 + ||z||)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 5000,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(TbflError::InvalidConfig(format!("solver tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(TbflError::InvalidConfig("solver max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedLassoFit {
    pub theta: ThetaStack,
    /// `v[0] = 0`, `v[i] = ||Theta_i||_F`.
    pub jump_norms: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Objective at the current iterate after each iteration (first entry: start point).
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Candidate penalties for [`tune_lambdas`], each list in descending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub lambda1_values: Vec<f64>,
    pub lambda2_values: Vec<f64>,
    /// Share of each block held out for validation.
    pub validation_fraction: f64,
}

pub const DEFAULT_GRID_POINTS: usize = 10;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;

fn log_spaced(max: f64, ratio: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![max];
    }
    (0..count)
        .map(|j| max * ratio.powf(j as f64 / (count - 1) as f64))
        .collect()
}

impl LambdaGrid {
    /// Explicit grid; values are sorted descending and deduplicated.
    pub fn new(lambda1_values: Vec<f64>, lambda2_values: Vec<f64>) -> Result<Self> {
        let grid = Self {
            lambda1_values: canonical(lambda1_values),
            lambda2_values: canonical(lambda2_values),
            validation_fraction: 0.2,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Log-spaced grids from the smallest penalty that zeroes every
    /// coordinate down to `1e-3` of it, 10 values each.
    pub fn default_for(dataset: &Dataset, partition: &BlockPartition) -> Result<Self> {
        let (l1_max, l2_max) = lambda_max(dataset, partition)?;
        let floor = f64::MIN_POSITIVE.sqrt();
        Self::new(
            log_spaced(l1_max.max(floor), DEFAULT_GRID_RATIO, DEFAULT_GRID_POINTS),
            log_spaced(l2_max.max(floor), DEFAULT_GRID_RATIO, DEFAULT_GRID_POINTS),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1_values.is_empty() || self.lambda2_values.is_empty() {
            return Err(TbflError::InvalidConfig("lambda grid is empty".into()));
        }
        let bad = self
            .lambda1_values
            .iter()
            .chain(&self.lambda2_values)
            .find(|v| !(**v > 0.0) || !v.is_finite());
        if let Some(v) = bad {
            return Err(TbflError::InvalidConfig(format!("lambda values must be positive, got {v}")));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(TbflError::InvalidConfig(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    /// Hold out offset `period - 1` of every `period` rows within each block.
    fn period(&self) -> usize {
        ((1.0 / self.validation_fraction).round() as usize).max(2)
    }
}

fn canonical(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v.dedup();
    v
}

/// Smallest `(lambda1, lambda2)` that, each acting alone, keep the all-zero
/// solution optimal on the full data.
pub fn lambda_max(dataset: &Dataset, partition: &BlockPartition) -> Result<(f64, f64)> {
    let problem = Problem::build(dataset, partition, |_| true)?;
    let grad = problem.gradient_at_zero();
    let (k, size) = (problem.k, problem.block_len());
    let mut l1 = 0.0f64;
    let mut l2 = 0.0f64;
    for coord in 0..size {
        if problem.masked[coord] {
            continue;
        }
        let mut tail = 0.0;
        for i in (0..k).rev() {
            let g = grad[i * size + coord];
            l2 = l2.max(g.abs());
            tail += g;
            l1 = l1.max(tail.abs());
        }
    }
    Ok((l1, l2))
}

/// Gram operator of one block, either as `X_i'X_i` or through the rows `X_i`
/// when the block is shorter than half the predictor dimension.
enum Gram {
    Full(DMatrix<f64>),
    Rows(DMatrix<f64>),
}

impl Gram {
    /// `out = G v` where `v` has length `p_x`; columns with zero weight are skipped.
    fn apply(&self, v: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        out.iter_mut().for_each(|o| *o = 0.0);
        match self {
            Gram::Full(g) => {
                let p = g.nrows();
                let data = g.as_slice();
                for (c, &w) in v.iter().enumerate() {
                    if w != 0.0 {
                        for (o, gv) in out.iter_mut().zip(&data[c * p..(c + 1) * p]) {
                            *o += w * gv;
                        }
                    }
                }
            }
            Gram::Rows(x) => {
                let m = x.nrows();
                let data = x.as_slice();
                scratch.clear();
                scratch.resize(m, 0.0);
                for (c, &w) in v.iter().enumerate() {
                    if w != 0.0 {
                        for (s, xv) in scratch.iter_mut().zip(&data[c * m..(c + 1) * m]) {
                            *s += w * xv;
                        }
                    }
                }
                for (c, o) in out.iter_mut().enumerate() {
                    *o = data[c * m..(c + 1) * m].iter().zip(scratch.iter()).map(|(a, b)| a * b).sum();
                }
            }
        }
    }
}

/// Quadratic loss in cumulative coordinates. State layout is block-major; block
/// `i` holds `B_i'` column-major (`p_x x p_y`), so coordinate `(l, c)` sits at
/// `i * p_x * p_y + l * p_x + c`.
struct Problem {
    k: usize,
    px: usize,
    py: usize,
    grams: Vec<Gram>,
    sxy: Vec<f64>,
    syy: f64,
    scale: f64,
    masked: Vec<bool>,
}

impl Problem {
    fn build(dataset: &Dataset, partition: &BlockPartition, keep: impl Fn(usize) -> bool) -> Result<Self> {
        if partition.n() != dataset.n() {
            return Err(TbflError::InvalidData(format!(
                "partition covers {} time points but the dataset has {}",
                partition.n(),
                dataset.n()
            )));
        }
        let (px, py, k) = (dataset.p_x(), dataset.p_y(), partition.blocks());
        let size = px * py;
        let mut grams = Vec::with_capacity(k);
        let mut sxy = vec![0.0; k * size];
        let mut syy = 0.0;
        let mut used = 0usize;
        for i in 0..k {
            let rows: Vec<usize> = partition.rows(i).filter(|&r| keep(r)).collect();
            used += rows.len();
            let xs = dataset.x().select_rows(&rows);
            let ys = dataset.y().select_rows(&rows);
            syy += ys.norm_squared();
            let cross = xs.transpose() * &ys;
            sxy[i * size..(i + 1) * size].copy_from_slice(cross.as_slice());
            if 2 * rows.len() < px {
                grams.push(Gram::Rows(xs));
            } else {
                grams.push(Gram::Full(xs.transpose() * &xs));
            }
        }
        if used == 0 {
            return Err(TbflError::InvalidData("no observations left to fit".into()));
        }
        let mut masked = vec![false; size];
        if let Some(mask) = dataset.diagonal_mask() {
            for (l, &c) in mask.iter().enumerate() {
                masked[l * px + c] = true;
            }
        }
        Ok(Self {
            k,
            px,
            py,
            grams,
            sxy,
            syy,
            scale: 1.0 / used as f64,
            masked,
        })
    }

    fn block_len(&self) -> usize {
        self.px * self.py
    }

    fn gradient_at_zero(&self) -> Vec<f64> {
        self.sxy.iter().map(|v| -2.0 * self.scale * v).collect()
    }

    /// Loss value, optionally with its gradient.
    fn eval(&self, b: &[f64], mut grad: Option<&mut [f64]>, h: &mut Vec<f64>, scratch: &mut Vec<f64>) -> f64 {
        let (px, size) = (self.px, self.block_len());
        h.resize(px, 0.0);
        let mut quad = 0.0;
        for i in 0..self.k {
            for l in 0..self.py {
                let off = i * size + l * px;
                let col = &b[off..off + px];
                let sxy = &self.sxy[off..off + px];
                let zero = col.iter().all(|v| *v == 0.0);
                if zero {
                    h.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    self.grams[i].apply(col, h, scratch);
                    quad += col.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>()
                        - 2.0 * col.iter().zip(sxy).map(|(a, b)| a * b).sum::<f64>();
                }
                if let Some(g) = grad.as_deref_mut() {
                    for c in 0..px {
                        g[off + c] = if self.masked[l * px + c] {
                            0.0
                        } else {
                            2.0 * self.scale * (h[c] - sxy[c])
                        };
                    }
                }
            }
        }
        self.scale * (self.syy + quad)
    }

    fn penalty(&self, b: &[f64], lambda1: f64, lambda2: f64, path: &mut Vec<f64>) -> f64 {
        let size = self.block_len();
        let mut total = 0.0;
        for coord in 0..size {
            if self.masked[coord] {
                continue;
            }
            path.clear();
            path.extend((0..self.k).map(|i| b[i * size + coord]));
            total += fused_path_penalty(path, lambda1, lambda2);
        }
        total
    }

    /// In place: `b <- prox(b)` with weights already divided by the step.
    fn prox(&self, b: &mut [f64], w1: f64, w2: f64, prox: &mut FusedPathProx, path: &mut Vec<f64>) {
        let size = self.block_len();
        for coord in 0..size {
            if self.masked[coord] {
                for i in 0..self.k {
                    b[i * size + coord] = 0.0;
                }
                continue;
            }
            path.clear();
            path.extend((0..self.k).map(|i| b[i * size + coord]));
            prox.apply(path, w1, w2);
            for (i, v) in path.iter().enumerate() {
                b[i * size + coord] = *v;
            }
        }
    }

    /// Largest eigenvalue of the loss Hessian, by power iteration per block.
    fn lipschitz(&self) -> f64 {
        let px = self.px;
        let mut v = vec![0.0; px];
        let mut w = vec![0.0; px];
        let mut scratch = Vec::new();
        let mut best = 0.0f64;
        for gram in &self.grams {
            v.iter_mut().enumerate().for_each(|(j, x)| *x = 1.0 + 0.01 * j as f64);
            let mut est = 0.0;
            for _ in 0..100 {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    break;
                }
                v.iter_mut().for_each(|x| *x /= norm);
                gram.apply(&v, &mut w, &mut scratch);
                let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
                std::mem::swap(&mut v, &mut w);
                if (next - est).abs() <= 1e-10 * next.abs() {
                    est = next;
                    break;
                }
                est = next;
            }
            best = best.max(est);
        }
        // Power iteration approaches from below; backtracking repairs the rest.
        (2.0 * self.scale * best * 1.01).max(f64::MIN_POSITIVE.sqrt())
    }

    fn state_from_theta(&self, theta: &ThetaStack) -> Vec<f64> {
        let size = self.block_len();
        let mut b = vec![0.0; self.k * size];
        for (i, m) in theta.cumulative().iter().enumerate() {
            b[i * size..(i + 1) * size].copy_from_slice(m.transpose().as_slice());
        }
        for coord in (0..size).filter(|c| self.masked[*c]) {
            for i in 0..self.k {
                b[i * size + coord] = 0.0;
            }
        }
        b
    }

    fn theta_from_state(&self, b: &[f64]) -> ThetaStack {
        let size = self.block_len();
        let cumulative = (0..self.k)
            .map(|i| DMatrix::from_column_slice(self.px, self.py, &b[i * size..(i + 1) * size]).transpose())
            .collect();
        ThetaStack::from_cumulative(cumulative)
    }

    fn solve(&self, lambda1: f64, lambda2: f64, init: Option<Vec<f64>>, opts: &SolverOptions) -> Solution {
        let total = self.k * self.block_len();
        let mut h = Vec::new();
        let mut scratch = Vec::new();
        let mut path = Vec::new();
        let mut prox = FusedPathProx::new();

        let mut x = init.unwrap_or_else(|| vec![0.0; total]);
        let mut f_x = self.eval(&x, None, &mut h, &mut scratch) + self.penalty(&x, lambda1, lambda2, &mut path);
        let mut trace = vec![f_x];
        let mut y = x.clone();
        let mut z = vec![0.0; total];
        let mut grad = vec![0.0; total];
        let mut t = 1.0f64;
        let mut lip = self.lipschitz();
        let mut converged = false;
        let mut iterations = 0;
        // whether y currently equals x (no momentum)
        let mut at_x = true;

        while iterations < opts.max_iter {
            iterations += 1;
            let f_y = self.eval(&y, Some(&mut grad), &mut h, &mut scratch);
            let f_z = loop {
                for j in 0..total {
                    z[j] = y[j] - grad[j] / lip;
                }
                self.prox(&mut z, lambda1 / lip, lambda2 / lip, &mut prox, &mut path);
                let f_z = self.eval(&z, None, &mut h, &mut scratch);
                let mut lin = 0.0;
                let mut dist = 0.0;
                for j in 0..total {
                    let d = z[j] - y[j];
                    lin += grad[j] * d;
                    dist += d * d;
                }
                let upper = f_y + lin + 0.5 * lip * dist;
                if f_z <= upper + 1e-12 * upper.abs().max(1.0) {
                    break f_z;
                }
                lip *= 2.0;
            };
            let obj_z = f_z + self.penalty(&z, lambda1, lambda2, &mut path);
            let step_norm = z.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let small_step = lip * step_norm <= opts.tol * (1.0 + z_norm);

            if obj_z <= f_x {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let momentum = (t - 1.0) / t_next;
                for j in 0..total {
                    y[j] = z[j] + momentum * (z[j] - x[j]);
                }
                std::mem::swap(&mut x, &mut z);
                f_x = obj_z;
                t = t_next;
                at_x = momentum == 0.0;
            } else if at_x {
                // a plain prox-gradient step from x cannot increase the
                // objective, so this is rounding noise at a stationary point
                trace.push(f_x);
                converged = true;
                break;
            } else {
                // restart from the best point without momentum
                y.copy_from_slice(&x);
                t = 1.0;
                at_x = true;
            }
            trace.push(f_x);
            if small_step {
                converged = true;
                break;
            }
        }
        Solution {
            state: x,
            trace,
            converged,
            iterations,
        }
    }

    /// Mean squared prediction error of `b` on the rows this problem was built from.
    fn mean_loss(&self, b: &[f64]) -> f64 {
        let mut h = Vec::new();
        let mut scratch = Vec::new();
        self.eval(b, None, &mut h, &mut scratch)
    }
}

struct Solution {
    state: Vec<f64>,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn check_lambdas(lambda1: f64, lambda2: f64) -> Result<()> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) || !lambda1.is_finite() || !lambda2.is_finite() {
        return Err(TbflError::InvalidConfig(format!(
            "penalties must be finite and nonnegative, got ({lambda1}, {lambda2})"
        )));
    }
    Ok(())
}

fn into_fit(problem: &Problem, sol: Solution, lambda1: f64, lambda2: f64) -> FusedLassoFit {
    let theta = problem.theta_from_state(&sol.state);
    FusedLassoFit {
        jump_norms: theta.jump_norms(),
        theta,
        lambda1,
        lambda2,
        objective_trace: sol.trace,
        converged: sol.converged,
        iterations: sol.iterations,
    }
}

/// Minimize the block fused lasso objective from zero.
pub fn solve(
    dataset: &Dataset,
    partition: &BlockPartition,
    lambda1: f64,
    lambda2: f64,
    opts: &SolverOptions,
) -> Result<FusedLassoFit> {
    solve_warm(dataset, partition, lambda1, lambda2, opts, None)
}

/// Minimize the block fused lasso objective starting from `init`.
pub fn solve_warm(
    dataset: &Dataset,
    partition: &BlockPartition,
    lambda1: f64,
    lambda2: f64,
    opts: &SolverOptions,
    init: Option<&ThetaStack>,
) -> Result<FusedLassoFit> {
    opts.validate()?;
    check_lambdas(lambda1, lambda2)?;
    let problem = Problem::build(dataset, partition, |_| true)?;
    let start = match init {
        Some(theta) => {
            if theta.blocks() != partition.blocks()
                || theta.cumulative().iter().any(|b| b.shape() != (dataset.p_y(), dataset.p_x()))
            {
                return Err(TbflError::InvalidData("warm start shape does not match the design".into()));
            }
            Some(problem.state_from_theta(theta))
        }
        None => None,
    };
    let sol = problem.solve(lambda1, lambda2, start, opts);
    Ok(into_fit(&problem, sol, lambda1, lambda2))
}

/// Value of the block fused lasso objective at `theta`, computed directly
/// from the fitted values.
pub fn objective(
    dataset: &Dataset,
    partition: &BlockPartition,
    theta: &ThetaStack,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    let fitted = crate::blocks::predict(dataset, partition, theta)?;
    let loss = (dataset.y() - fitted).norm_squared() / dataset.n() as f64;
    let l1: f64 = theta.jumps().iter().map(|j| j.iter().map(|v| v.abs()).sum::<f64>()).sum();
    let cum: f64 = theta.cumulative().iter().map(|j| j.iter().map(|v| v.abs()).sum::<f64>()).sum();
    Ok(loss + lambda1 * l1 + lambda2 * cum)
}

/// Result of [`tune_lambdas`].
#[derive(Clone, Debug)]
pub struct TunedFit {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Refit on all observations at the chosen pair.
    pub fit: FusedLassoFit,
    /// Validation error, indexed `[lambda2][lambda1]` in grid order.
    pub mspe: Vec<Vec<f64>>,
}

/// Rows held out for validation: one of every `period` rows within each block.
pub fn validation_rows(partition: &BlockPartition, period: usize) -> Vec<bool> {
    let mut held = vec![false; partition.n()];
    for i in 0..partition.blocks() {
        let rows = partition.rows(i);
        for r in rows.clone() {
            held[r] = (r - rows.start) % period == period - 1;
        }
    }
    held
}

/// Pick `(lambda1, lambda2)` by validation error. Fits along each descending
/// `lambda1` sweep are warm-started from the previous one; each new `lambda2`
/// starts from zero. Ties keep the first pair in grid order.
pub fn tune_lambdas(
    dataset: &Dataset,
    partition: &BlockPartition,
    grid: &LambdaGrid,
    opts: &SolverOptions,
) -> Result<TunedFit> {
    grid.validate()?;
    opts.validate()?;
    let held = validation_rows(partition, grid.period());
    let train = Problem::build(dataset, partition, |r| !held[r])?;
    let valid = Problem::build(dataset, partition, |r| held[r]);
    let mut best: Option<(f64, f64, f64)> = None;
    let mut mspe = Vec::with_capacity(grid.lambda2_values.len());
    for &l2 in &grid.lambda2_values {
        let mut row = Vec::with_capacity(grid.lambda1_values.len());
        let mut warm: Option<Vec<f64>> = None;
        for &l1 in &grid.lambda1_values {
            let sol = train.solve(l1, l2, warm.take(), opts);
            let err = match &valid {
                Ok(v) => v.mean_loss(&sol.state),
                Err(_) => train.mean_loss(&sol.state),
            };
            if best.map_or(true, |(e, _, _)| err < e) {
                best = Some((err, l1, l2));
            }
            row.push(err);
            warm = Some(sol.state);
        }
        mspe.push(row);
    }
    let (_, lambda1, lambda2) = best.expect("grid validated non-empty");
    let fit = solve(dataset, partition, lambda1, lambda2, opts)?;
    Ok(TunedFit {
        lambda1,
        lambda2,
        fit,
        mspe,
    })
}
