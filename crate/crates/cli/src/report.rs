// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON reports.
//!
//! Everything except the `timing` object is a deterministic function of the
//! inputs and options, so two identical runs differ only there.

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tbfl::block_select::HbicRow;
use tbfl::evalsim::{ScenarioSpec, ScenarioSummary};
use tbfl::pipeline::{DetectionResult, HyperParameters};
use tbfl::Dataset;

use crate::io::ModelArg;

/// Wall-clock information; the only part of a report that varies between runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Seconds since the Unix epoch when the command started.
    pub started_at: u64,
    pub read_seconds: f64,
    pub compute_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    /// First and last time point of the segment, inclusive.
    pub start: usize,
    pub end: usize,
    /// `(response, predictor)` pairs of the nonzero thresholded entries, 0-based.
    pub support: Vec<(usize, usize)>,
    pub nonzero: usize,
    pub raw_norm: f64,
    pub thresholded_norm: f64,
    pub threshold: f64,
    pub residual_variances: Vec<f64>,
    /// Thresholded coefficients, rows = responses (only with `--full-matrices`).
    pub coefficients: Option<Vec<Vec<f64>>>,
    /// Precision matrix for graphical models (only with `--full-matrices`).
    pub precision: Option<Vec<Vec<f64>>>,
}

/// Jump norm of every block against its start time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpNormSeries {
    pub block_start_times: Vec<usize>,
    pub norms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub block_indices: Vec<usize>,
    pub times: Vec<usize>,
    pub threshold: Option<f64>,
    /// Non-finite entries (a perfect fit) are written as null.
    pub bic_trace: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<Vec<usize>>,
    pub kappa1: f64,
    pub kappa2: f64,
    pub gap_choice: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_objective: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    pub command: String,
    pub model: ModelArg,
    pub n: usize,
    pub p_x: usize,
    pub p_y: usize,
    pub time_offset: usize,
    pub change_points: Vec<usize>,
    pub hyper_parameters: HyperParameters,
    pub segments: Vec<SegmentReport>,
    pub jump_norms: JumpNormSeries,
    pub candidates: CandidateReport,
    pub clusters: ClusterReport,
    pub hbic_table: Option<Vec<HbicRow>>,
    pub solver: SolverReport,
    pub diagnostics: Vec<String>,
    pub timing: Timing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub command: String,
    pub scenario: ScenarioSpec,
    pub reps: usize,
    pub summary: ScenarioSummary,
    pub timing: Timing,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

impl DetectReport {
    pub fn new(
        command: &str,
        model: ModelArg,
        dataset: &Dataset,
        result: &DetectionResult,
        full_matrices: bool,
        timing: Timing,
    ) -> Self {
        let n = dataset.n();
        let offset = dataset.time_offset();
        let coeffs = &result.coefficients;
        let mut bounds = vec![1];
        bounds.extend(&coeffs.boundaries);
        bounds.push(n + 1);
        let segments = (0..coeffs.segments())
            .map(|j| {
                let b = &coeffs.thresholded[j];
                let mut support = Vec::new();
                for l in 0..b.nrows() {
                    for c in 0..b.ncols() {
                        if b[(l, c)] != 0.0 {
                            support.push((l, c));
                        }
                    }
                }
                SegmentReport {
                    start: bounds[j] + offset,
                    end: bounds[j + 1] - 1 + offset,
                    nonzero: support.len(),
                    support,
                    raw_norm: coeffs.raw[j].norm(),
                    thresholded_norm: b.norm(),
                    threshold: coeffs.thresholds[j],
                    residual_variances: coeffs.residual_variances[j].clone(),
                    coefficients: full_matrices.then(|| rows(b)),
                    precision: result
                        .precision
                        .as_ref()
                        .filter(|_| full_matrices)
                        .map(|p| rows(&p.omega[j])),
                }
            })
            .collect();
        let partition = &result.partition;
        DetectReport {
            command: command.into(),
            model,
            n,
            p_x: dataset.p_x(),
            p_y: dataset.p_y(),
            time_offset: offset,
            change_points: result.change_points.clone(),
            hyper_parameters: result.hyper.clone(),
            segments,
            jump_norms: JumpNormSeries {
                block_start_times: (0..partition.blocks()).map(|i| partition.start_time(i) + offset).collect(),
                norms: result.fit.jump_norms.clone(),
            },
            candidates: CandidateReport {
                block_indices: result.candidates.indices.clone(),
                times: result.candidates.times.iter().map(|t| t + offset).collect(),
                threshold: finite(result.candidates.threshold),
                bic_trace: result.candidates.bic_trace.iter().copied().map(finite).collect(),
            },
            clusters: ClusterReport {
                clusters: result
                    .clusters
                    .clusters
                    .iter()
                    .map(|c| c.iter().map(|t| t + offset).collect())
                    .collect(),
                kappa1: result.clusters.kappa1,
                kappa2: result.clusters.kappa2,
                gap_choice: result.clusters.gap_choice,
            },
            hbic_table: result.hbic_table.clone(),
            solver: SolverReport {
                converged: result.fit.converged,
                iterations: result.fit.iterations,
                final_objective: result.fit.objective_trace.last().copied().and_then(finite),
            },
            diagnostics: result.diagnostics.clone(),
            timing,
        }
    }
}

/// Pretty JSON with a trailing newline. Field order follows the struct
/// definitions, and floats are written with shortest round-trip precision.
pub fn write_report<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}

pub fn parse_report<T: DeserializeOwned>(text: &str) -> serde_json::Result<T> {
    serde_json::from_str(text)
}
