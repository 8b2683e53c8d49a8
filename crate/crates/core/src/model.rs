// SPDX-License-Identifier: MIT OR Apache-2.0

//! Regression-with-breaks data model and the adapters that map concrete
//! model families onto it.
//!
//! Time indices in this crate are 1-based: a change point `t` means that
//! observation `t` (row `t - 1`) is the first one of the new segment.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TbflError};

/// Model family a [`Dataset`] was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MeanShift,
    Regression,
    Graphical,
    Lagged,
}

/// Time-indexed predictors `X` (n × p_x) and responses `Y` (n × p_y).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    diagonal_mask: Option<Vec<usize>>,
    kind: ModelKind,
    time_offset: usize,
}

fn check_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(TbflError::InvalidData(format!(
                    "{name} has a non-finite entry at row {}, column {}",
                    r + 1,
                    c + 1
                )));
            }
        }
    }
    Ok(())
}

impl Dataset {
    /// Validating constructor shared by the adapters.
    pub fn new(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        diagonal_mask: Option<Vec<usize>>,
        kind: ModelKind,
    ) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(TbflError::InvalidData(format!(
                "predictors have {} rows but responses have {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if y.nrows() < 2 {
            return Err(TbflError::InvalidData(format!(
                "need at least 2 time points, got {}",
                y.nrows()
            )));
        }
        if x.ncols() == 0 || y.ncols() == 0 {
            return Err(TbflError::InvalidData("empty predictor or response dimension".into()));
        }
        check_finite("predictors", &x)?;
        check_finite("responses", &y)?;
        if let Some(mask) = &diagonal_mask {
            if mask.len() != y.ncols() {
                return Err(TbflError::InvalidData(format!(
                    "diagonal mask has length {} but p_y = {}",
                    mask.len(),
                    y.ncols()
                )));
            }
            if let Some(bad) = mask.iter().find(|&&k| k >= x.ncols()) {
                return Err(TbflError::InvalidData(format!(
                    "diagonal mask entry {bad} is not a predictor index (p_x = {})",
                    x.ncols()
                )));
            }
        }
        Ok(Self {
            x,
            y,
            diagonal_mask,
            kind,
            time_offset: 0,
        })
    }

    /// Mean-shift model: every predictor is the constant 1.
    pub fn mean_shift(y: DMatrix<f64>) -> Result<Self> {
        let x = DMatrix::from_element(y.nrows(), 1, 1.0);
        Self::new(x, y, None, ModelKind::MeanShift)
    }

    /// Multiple (multivariate) regression model; inputs are wrapped unchanged.
    pub fn regression(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        Self::new(x, y, None, ModelKind::Regression)
    }

    /// Gaussian graphical model by neighborhood regression: each coordinate
    /// is regressed on all the others, so response `l` never sees predictor `l`.
    pub fn graphical(x: DMatrix<f64>) -> Result<Self> {
        let p = x.ncols();
        let y = x.clone();
        Self::new(x, y, Some((0..p).collect()), ModelKind::Graphical)
    }

    /// Lagged-response model of order `lag`: `x_t = (y_{t-1}', ..., y_{t-lag}')'`.
    ///
    /// The first `lag` observations only serve as predictors; change points
    /// found on this dataset are shifted by `lag` when reported.
    pub fn lagged(y: DMatrix<f64>, lag: usize) -> Result<Self> {
        if lag == 0 {
            return Err(TbflError::InvalidData("lag order must be at least 1".into()));
        }
        let (n, p) = y.shape();
        if n <= lag {
            return Err(TbflError::InvalidData(format!(
                "lag order {lag} needs more than {lag} time points, got {n}"
            )));
        }
        check_finite("responses", &y)?;
        let rows = n - lag;
        let x = DMatrix::from_fn(rows, lag * p, |r, c| {
            let (l, k) = (c / p, c % p);
            y[(r + lag - 1 - l, k)]
        });
        let resp = y.rows(lag, rows).into_owned();
        let mut ds = Self::new(x, resp, None, ModelKind::Lagged)?;
        ds.time_offset = lag;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn p_y(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn diagonal_mask(&self) -> Option<&[usize]> {
        self.diagonal_mask.as_deref()
    }

    /// Whether coefficient `(response, predictor)` is structurally zero.
    pub fn is_masked(&self, response: usize, predictor: usize) -> bool {
        self.diagonal_mask
            .as_ref()
            .is_some_and(|m| m[response] == predictor)
    }

    /// Number of leading observations dropped by the adapter.
    pub fn time_offset(&self) -> usize {
        self.time_offset
    }

    /// Sum of squared residuals `||y_t - B x_t||^2` over a row range.
    pub fn rss(&self, rows: Range<usize>, coef: &DMatrix<f64>) -> f64 {
        self.row_losses(rows, coef).iter().sum()
    }

    /// Per-row squared residual norms `||y_t - B x_t||^2` over a row range.
    pub fn row_losses(&self, rows: Range<usize>, coef: &DMatrix<f64>) -> Vec<f64> {
        let len = rows.len();
        if len == 0 {
            return Vec::new();
        }
        let xs = self.x.rows(rows.start, len);
        let ys = self.y.rows(rows.start, len);
        let resid = ys - xs * coef.transpose();
        resid.row_iter().map(|r| r.norm_squared()).collect()
    }

    /// Residual variance of each response coordinate over a row range,
    /// with denominator equal to the number of rows.
    pub fn residual_variances(&self, rows: Range<usize>, coef: &DMatrix<f64>) -> Vec<f64> {
        let len = rows.len();
        if len == 0 {
            return vec![0.0; self.p_y()];
        }
        let xs = self.x.rows(rows.start, len);
        let ys = self.y.rows(rows.start, len);
        let resid = ys - xs * coef.transpose();
        resid
            .column_iter()
            .map(|c| {
                let mean = c.sum() / len as f64;
                c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64
            })
            .collect()
    }
}

/// Row range covered by the segments that a sorted list of 1-based change
/// points induces on `n` observations.
pub fn segment_rows(change_points: &[usize], n: usize) -> Vec<Range<usize>> {
    let mut starts = Vec::with_capacity(change_points.len() + 2);
    starts.push(0);
    starts.extend(change_points.iter().map(|&t| t - 1));
    starts.push(n);
    starts.windows(2).map(|w| w[0]..w[1]).collect()
}

/// Per-segment coefficient estimates after localization.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentCoefficients {
    /// Final change points, strictly increasing, 1-based.
    pub boundaries: Vec<usize>,
    /// Raw estimates built from partial sums of the block jumps.
    pub raw: Vec<DMatrix<f64>>,
    /// Element-wise hard-thresholded estimates.
    pub thresholded: Vec<DMatrix<f64>>,
    /// Threshold chosen for each segment.
    pub thresholds: Vec<f64>,
    /// Residual variance per response coordinate for each segment.
    pub residual_variances: Vec<Vec<f64>>,
}

impl SegmentCoefficients {
    pub fn segments(&self) -> usize {
        self.raw.len()
    }
}

/// Precision matrices recovered from neighborhood regressions.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionEstimate {
    pub omega: Vec<DMatrix<f64>>,
    pub segments: Vec<usize>,
}

/// Keep the smaller-magnitude entry when the signs agree, zero otherwise.
fn min_magnitude(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 || a.signum() != b.signum() {
        0.0
    } else if a.abs() <= b.abs() {
        a
    } else {
        b
    }
}

/// Symmetrize raw precision values by the minimum-magnitude rule.
pub fn symmetrize_min_magnitude(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let p = raw.nrows();
    DMatrix::from_fn(p, p, |l, k| {
        if l == k {
            raw[(l, l)]
        } else {
            min_magnitude(raw[(l, k)], raw[(k, l)])
        }
    })
}

/// Rebuild per-segment precision matrices from the thresholded neighborhood
/// coefficients and residual variances:
/// `Omega(l,l) = 1 / v_l`, `Omega(l,k) = -Omega(l,l) * A(l,k)`, then symmetrized.
pub fn reconstruct_precision(
    coeffs: &SegmentCoefficients,
    dataset: &Dataset,
) -> Result<PrecisionEstimate> {
    if dataset.kind() != ModelKind::Graphical || dataset.p_x() != dataset.p_y() {
        return Err(TbflError::InvalidData(
            "precision reconstruction needs a graphical-model dataset".into(),
        ));
    }
    let p = dataset.p_y();
    let mut omega = Vec::with_capacity(coeffs.segments());
    for (j, (a, vars)) in coeffs
        .thresholded
        .iter()
        .zip(&coeffs.residual_variances)
        .enumerate()
    {
        let mut raw = DMatrix::zeros(p, p);
        for l in 0..p {
            let v = vars[l];
            if v <= 0.0 || !v.is_finite() {
                return Err(TbflError::DegenerateResiduals {
                    segment: j,
                    response: l,
                });
            }
            let diag = 1.0 / v;
            raw[(l, l)] = diag;
            for k in 0..p {
                if k != l {
                    raw[(l, k)] = -diag * a[(l, k)];
                }
            }
        }
        omega.push(symmetrize_min_magnitude(&raw));
    }
    Ok(PrecisionEstimate {
        omega,
        segments: coeffs.boundaries.clone(),
    })
}
