// SPDX-License-Identifier: MIT OR Apache-2.0

//! Block partition of the time axis and the matrix-free cumulative design
//! operator `Z` (lower-triangular in blocks) with its adjoint.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Result, TbflError};
use crate::model::Dataset;

/// Block boundaries `r_0 = 1 < r_1 < ... < r_k = n + 1` (1-based times).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPartition {
    n: usize,
    block_size: usize,
    boundaries: Vec<usize>,
}

impl BlockPartition {
    /// Equal blocks of `block_size`; the remainder is absorbed by the last block.
    pub fn new(n: usize, block_size: usize) -> Result<Self> {
        if block_size < 2 || block_size > n / 2 {
            return Err(TbflError::InvalidBlockSize { n, block_size });
        }
        let k = n / block_size;
        let mut boundaries: Vec<usize> = (0..k).map(|i| 1 + i * block_size).collect();
        boundaries.push(n + 1);
        Ok(Self {
            n,
            block_size,
            boundaries,
        })
    }

    /// Like [`BlockPartition::new`], but the first and last blocks are
    /// stretched to `boundary_size` observations.
    pub fn with_boundary_blocks(n: usize, block_size: usize, boundary_size: usize) -> Result<Self> {
        if boundary_size <= block_size {
            return Self::new(n, block_size);
        }
        if block_size < 2 || 2 * boundary_size + block_size > n {
            return Err(TbflError::InvalidConfig(format!(
                "boundary block size {boundary_size} with interior size {block_size} does not fit n = {n}"
            )));
        }
        let interior = (n - 2 * boundary_size) / block_size;
        let mut boundaries = vec![1, 1 + boundary_size];
        for i in 1..=interior {
            boundaries.push(1 + boundary_size + i * block_size);
        }
        boundaries.push(n + 1);
        Ok(Self {
            n,
            block_size,
            boundaries,
        })
    }

    /// Arbitrary ordered boundaries; mainly for tests and single-block fits.
    pub fn from_boundaries(n: usize, boundaries: Vec<usize>) -> Result<Self> {
        let ok = boundaries.len() >= 2
            && boundaries[0] == 1
            && *boundaries.last().unwrap() == n + 1
            && boundaries.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(TbflError::InvalidConfig(format!(
                "block boundaries must increase from 1 to {}",
                n + 1
            )));
        }
        let block_size = boundaries[1] - boundaries[0];
        Ok(Self {
            n,
            block_size,
            boundaries,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Number of blocks `k_n`.
    pub fn blocks(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Zero-based row range of block `i` (0-based).
    pub fn rows(&self, i: usize) -> Range<usize> {
        self.boundaries[i] - 1..self.boundaries[i + 1] - 1
    }

    /// Time at which block `i` starts, i.e. the candidate change point `r_{i-1}`
    /// in 1-based block numbering.
    pub fn start_time(&self, i: usize) -> usize {
        self.boundaries[i]
    }

    /// Zero-based block containing 1-based time `t`.
    pub fn block_of(&self, t: usize) -> usize {
        self.boundaries.partition_point(|&r| r <= t) - 1
    }
}

/// Block jumps `Theta_1..Theta_k` and their partial sums `B_i = sum_{j<=i} Theta_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaStack {
    jumps: Vec<DMatrix<f64>>,
    cumulative: Vec<DMatrix<f64>>,
}

impl ThetaStack {
    pub fn zeros(blocks: usize, p_y: usize, p_x: usize) -> Self {
        let z = DMatrix::zeros(p_y, p_x);
        Self {
            jumps: vec![z.clone(); blocks],
            cumulative: vec![z; blocks],
        }
    }

    pub fn from_jumps(jumps: Vec<DMatrix<f64>>) -> Self {
        let mut cumulative: Vec<DMatrix<f64>> = Vec::with_capacity(jumps.len());
        for j in &jumps {
            let next = match cumulative.last() {
                Some(prev) => prev + j,
                None => j.clone(),
            };
            cumulative.push(next);
        }
        Self { jumps, cumulative }
    }

    pub fn from_cumulative(cumulative: Vec<DMatrix<f64>>) -> Self {
        let jumps = cumulative
            .iter()
            .enumerate()
            .map(|(i, b)| if i == 0 { b.clone() } else { b - &cumulative[i - 1] })
            .collect();
        Self { jumps, cumulative }
    }

    pub fn blocks(&self) -> usize {
        self.jumps.len()
    }

    pub fn jumps(&self) -> &[DMatrix<f64>] {
        &self.jumps
    }

    pub fn cumulative(&self) -> &[DMatrix<f64>] {
        &self.cumulative
    }

    /// `v_1 = 0`, `v_i = ||Theta_i||_F` for `i >= 2`.
    pub fn jump_norms(&self) -> Vec<f64> {
        self.jumps
            .iter()
            .enumerate()
            .map(|(i, j)| if i == 0 { 0.0 } else { j.norm() })
            .collect()
    }
}

fn check_shapes(dataset: &Dataset, partition: &BlockPartition) -> Result<()> {
    if partition.n() != dataset.n() {
        return Err(TbflError::InvalidData(format!(
            "partition covers {} time points but the dataset has {}",
            partition.n(),
            dataset.n()
        )));
    }
    Ok(())
}

/// Fitted values `Z theta`: row `t` is `B_{i(t)} x_t`.
pub fn predict(
    dataset: &Dataset,
    partition: &BlockPartition,
    theta: &ThetaStack,
) -> Result<DMatrix<f64>> {
    check_shapes(dataset, partition)?;
    if theta.blocks() != partition.blocks()
        || theta.cumulative.iter().any(|b| b.shape() != (dataset.p_y(), dataset.p_x()))
    {
        return Err(TbflError::InvalidData("theta shape does not match the design".into()));
    }
    let mut out = DMatrix::zeros(dataset.n(), dataset.p_y());
    for (i, b) in theta.cumulative.iter().enumerate() {
        let rows = partition.rows(i);
        let xs = dataset.x().rows(rows.start, rows.len());
        out.rows_mut(rows.start, rows.len()).copy_from(&(xs * b.transpose()));
    }
    Ok(out)
}

/// Gradient of `(1/n)||y - Z theta||^2` with respect to each `Theta_i` when
/// `residual = y - Z theta`: block `i` receives `-(2/n) sum_{t >= r_{i-1}} r_t x_t'`.
pub fn adjoint_residual(
    dataset: &Dataset,
    partition: &BlockPartition,
    residual: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    check_shapes(dataset, partition)?;
    if residual.shape() != (dataset.n(), dataset.p_y()) {
        return Err(TbflError::InvalidData("residual shape does not match the responses".into()));
    }
    let scale = -2.0 / dataset.n() as f64;
    let k = partition.blocks();
    let mut grads = vec![DMatrix::zeros(dataset.p_y(), dataset.p_x()); k];
    let mut tail = DMatrix::zeros(dataset.p_y(), dataset.p_x());
    for i in (0..k).rev() {
        let rows = partition.rows(i);
        let xs = dataset.x().rows(rows.start, rows.len());
        let rs = residual.rows(rows.start, rows.len());
        tail += rs.transpose() * xs;
        grads[i] = &tail * scale;
    }
    Ok(grads)
}
