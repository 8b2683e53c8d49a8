// SPDX-License-Identifier: MIT OR Apache-2.0

//! Monte-Carlo replicates and their aggregation.

use serde::{Deserialize, Serialize};

use super::metrics::{estimation_metrics, hausdorff_distance, tpcp_metrics, BreakOutcome};
use super::scenario::{generate, ScenarioSpec};
use crate::error::Result;
use crate::pipeline::{detect, BlockSize, DetectOptions};
use crate::seed::derive_seed;

/// Metrics of one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub replicate: usize,
    pub data_seed: u64,
    pub detected: Vec<usize>,
    pub detected_count: usize,
    pub block_size: usize,
    /// `None` when exactly one of the two sets is empty.
    pub hausdorff: Option<f64>,
    pub tpcp_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub breaks: Vec<BreakOutcome>,
    /// Present when the detected and true segment counts agree.
    pub ree: Option<Vec<Option<f64>>>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

/// Data and pipeline seeds of replicate `r`.
pub fn replicate_seeds(master: u64, r: usize) -> (u64, u64) {
    (
        derive_seed(master, "replicate", r as u64),
        derive_seed(master, "pipeline", r as u64),
    )
}

/// Pipeline options implied by a scenario, layered over `base`.
pub fn scenario_options(spec: &ScenarioSpec, base: &DetectOptions) -> DetectOptions {
    let mut opts = base.clone();
    opts.block_size = match spec.block_size {
        Some(b) => BlockSize::Fixed(b),
        None => BlockSize::Auto,
    };
    if spec.boundary_block_size.is_some() {
        opts.boundary_block_size = spec.boundary_block_size;
    }
    if spec.search_domain.is_some() {
        opts.search_domain = spec.search_domain.clone();
    }
    opts
}

/// Generate replicate `r` and run detection on it.
pub fn run_replicate(spec: &ScenarioSpec, r: usize, base: &DetectOptions) -> Result<EvalReport> {
    let (data_seed, pipeline_seed) = replicate_seeds(spec.seed, r);
    let mut data_spec = spec.clone();
    data_spec.seed = data_seed;
    let truth = generate(&data_spec)?;
    let mut opts = scenario_options(spec, base);
    opts.seed = pipeline_seed;
    let result = detect(&truth.dataset, &opts)?;

    let detected = result.change_points.clone();
    let n = truth.dataset.n();
    let tp = tpcp_metrics(&detected, &truth.change_points, n);
    let h = hausdorff_distance(&detected, &truth.change_points);
    let est = estimation_metrics(
        &result.coefficients.thresholded,
        &truth.coefficients,
        truth.dataset.diagonal_mask(),
    );
    Ok(EvalReport {
        replicate: r,
        data_seed,
        detected_count: detected.len(),
        detected,
        block_size: result.hyper.block_size,
        hausdorff: h.is_finite().then_some(h),
        tpcp_count: tp.tpcp_count,
        precision: tp.precision,
        recall: tp.recall,
        f1: tp.f1,
        breaks: tp.breaks,
        tpr: est.as_ref().map(|e| e.tpr),
        fpr: est.as_ref().map(|e| e.fpr),
        ree: est.map(|e| e.ree),
    })
}

/// Mean and sample standard deviation (`None` for an empty sample; std is
/// zero for a single value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(MeanStd {
        mean,
        std,
        count: values.len(),
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { (v[k / 2 - 1] + v[k / 2]) / 2.0 })
}

/// Selection rate and location error at one true change point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakSummary {
    pub truth: usize,
    /// Fraction of successful replicates with an estimate inside the acceptance interval.
    pub selection_rate: f64,
    /// Absolute error of the matched estimate, over replicates where it was selected.
    pub location_error: Option<MeanStd>,
    /// The same error divided by n.
    pub relative_error: Option<MeanStd>,
}

/// Counts of `|m - m0|` equal to 0, 1, 2 and more than 2.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountHistogram {
    pub exact: usize,
    pub off_by_one: usize,
    pub off_by_two: usize,
    pub more: usize,
}

impl CountHistogram {
    pub fn add(&mut self, detected: usize, m0: usize) {
        match detected.abs_diff(m0) {
            0 => self.exact += 1,
            1 => self.off_by_one += 1,
            2 => self.off_by_two += 1,
            _ => self.more += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub n: usize,
    pub m0: usize,
    pub replicates: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub breaks: Vec<BreakSummary>,
    pub count_histogram: CountHistogram,
    pub detected_count: Option<MeanStd>,
    pub hausdorff: Option<MeanStd>,
    pub f1: Option<MeanStd>,
    /// Mean over segments of the per-replicate REE, when counts match.
    pub ree: Option<MeanStd>,
    pub tpr_median: Option<f64>,
    pub fpr_median: Option<f64>,
    pub block_sizes: Vec<usize>,
    pub failures: Vec<ReplicateFailure>,
    pub reports: Vec<EvalReport>,
}

/// Aggregate replicate outcomes, given in replicate order.
pub fn summarize(spec: &ScenarioSpec, outcomes: Vec<Result<EvalReport>>) -> ScenarioSummary {
    let replicates = outcomes.len();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rep) => reports.push(rep),
            Err(e) => failures.push(ReplicateFailure {
                replicate: r,
                error: e.to_string(),
            }),
        }
    }
    let m0 = spec.m0();
    let ok = reports.len();
    let breaks = spec
        .change_points
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let errs: Vec<f64> = reports.iter().filter_map(|r| r.breaks[j].error).collect();
            let rel: Vec<f64> = errs.iter().map(|e| e / spec.n as f64).collect();
            BreakSummary {
                truth: t,
                selection_rate: if ok == 0 { 0.0 } else { errs.len() as f64 / ok as f64 },
                location_error: mean_std(&errs),
                relative_error: mean_std(&rel),
            }
        })
        .collect();
    let mut count_histogram = CountHistogram::default();
    for r in &reports {
        count_histogram.add(r.detected_count, m0);
    }
    let counts: Vec<f64> = reports.iter().map(|r| r.detected_count as f64).collect();
    let hd: Vec<f64> = reports.iter().filter_map(|r| r.hausdorff).collect();
    let f1: Vec<f64> = reports.iter().map(|r| r.f1).collect();
    let ree: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.ree.as_ref())
        .filter_map(|segs| {
            let defined: Vec<f64> = segs.iter().flatten().copied().collect();
            mean_std(&defined).map(|m| m.mean)
        })
        .collect();
    let tpr: Vec<f64> = reports.iter().filter_map(|r| r.tpr).collect();
    let fpr: Vec<f64> = reports.iter().filter_map(|r| r.fpr).collect();
    ScenarioSummary {
        scenario: spec.name.clone(),
        n: spec.n,
        m0,
        replicates,
        succeeded: ok,
        failed: failures.len(),
        breaks,
        count_histogram,
        detected_count: mean_std(&counts),
        hausdorff: mean_std(&hd),
        f1: if m0 == 0 { None } else { mean_std(&f1) },
        ree: mean_std(&ree),
        tpr_median: median(&tpr),
        fpr_median: median(&fpr),
        block_sizes: reports.iter().map(|r| r.block_size).collect(),
        failures,
        reports,
    }
}

/// Run `reps` replicates sequentially and aggregate them.
pub fn run_scenario(spec: &ScenarioSpec, reps: usize, base: &DetectOptions) -> Result<ScenarioSummary> {
    if reps == 0 {
        return Err(crate::error::TbflError::InvalidConfig("reps must be at least 1".into()));
    }
    spec.validate()?;
    let outcomes = (0..reps).map(|r| run_replicate(spec, r, base)).collect();
    Ok(summarize(spec, outcomes))
}
