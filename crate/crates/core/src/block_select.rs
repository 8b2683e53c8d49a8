// SPDX-License-Identifier: MIT OR Apache-2.0

//! Block size selection by the high-dimensional BIC.

use serde::{Deserialize, Serialize};

use crate::error::{Result, Stage, TbflError};
use crate::model::{segment_rows, Dataset};
use crate::pipeline::{detect_with_block_size, DetectOptions, DetectionResult};
use crate::screening::count_nonzero;

pub const DEFAULT_GAMMA: f64 = 1.5;
pub const DOMAIN_POINTS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HbicConfig {
    pub gamma: f64,
    /// Candidate block sizes; `None` uses [`default_search_domain`].
    pub domain: Option<Vec<usize>>,
}

impl Default for HbicConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            domain: None,
        }
    }
}

/// One candidate block size and its criterion value (`None` when the run failed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HbicRow {
    pub block_size: usize,
    pub hbic: Option<f64>,
    pub change_points: usize,
    pub error: Option<String>,
}

/// Residual sum of squares of the thresholded segment fits, and their total
/// number of nonzero entries.
pub fn fit_summary(dataset: &Dataset, result: &DetectionResult) -> (f64, usize) {
    let coeffs = &result.coefficients;
    let rss = segment_rows(&coeffs.boundaries, dataset.n())
        .into_iter()
        .zip(&coeffs.thresholded)
        .map(|(rows, b)| dataset.rss(rows, b))
        .sum();
    let support = coeffs.thresholded.iter().map(count_nonzero).sum();
    (rss, support)
}

/// `n log(RSS/n) + 2 gamma log(p_x p_y) |M|`; `-inf` when RSS is zero.
pub fn hbic_value(n: usize, p_x: usize, p_y: usize, rss: f64, support: usize, gamma: f64) -> f64 {
    let n = n as f64;
    let fit = if rss > 0.0 {
        n * (rss / n).ln()
    } else {
        f64::NEG_INFINITY
    };
    fit + 2.0 * gamma * ((p_x * p_y) as f64).ln() * support as f64
}

pub fn hbic(dataset: &Dataset, result: &DetectionResult, gamma: f64) -> f64 {
    let (rss, support) = fit_summary(dataset, result);
    hbic_value(dataset.n(), dataset.p_x(), dataset.p_y(), rss, support, gamma)
}

/// Five evenly spaced block sizes between the lower and upper bounds derived
/// from the sample size and dimensions.
pub fn default_search_domain(n: usize, p_x: usize, p_y: usize) -> Result<Vec<usize>> {
    if n < 40 {
        return Err(TbflError::InvalidConfig(format!("block size search needs n >= 40, got {n}")));
    }
    let nf = n as f64;
    let logs = (p_x as f64).ln() + (p_y as f64).ln();
    let lower = ((nf.ln() * logs).ceil() as usize).max(2);
    let root = nf.sqrt();
    let upper = if root > (p_x * p_y) as f64 {
        root.min(nf / 20.0)
    } else {
        (root * logs).min(nf / 20.0)
    }
    .floor() as usize;
    if lower > upper {
        return Err(TbflError::InvalidConfig(format!(
            "empty block size range: lower bound {lower} exceeds upper bound {upper}"
        )));
    }
    let span = (upper - lower) as f64;
    let mut sizes: Vec<usize> = (0..DOMAIN_POINTS)
        .map(|j| lower + (span * j as f64 / (DOMAIN_POINTS - 1) as f64).round() as usize)
        .collect();
    sizes.dedup();
    Ok(sizes)
}

/// Detection at every candidate block size, in increasing order of size.
pub fn evaluate_block_sizes(
    dataset: &Dataset,
    domain: &[usize],
    options: &DetectOptions,
) -> Vec<(usize, Result<DetectionResult>)> {
    let mut sizes = domain.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|b| (b, detect_with_block_size(dataset, b, options)))
        .collect()
}

/// Index of the HBIC minimizer among successful runs; ties go to the smaller size.
pub fn choose_block_size(
    dataset: &Dataset,
    runs: &[(usize, Result<DetectionResult>)],
    gamma: f64,
) -> (Option<usize>, Vec<HbicRow>) {
    let mut best: Option<(f64, usize)> = None;
    let rows = runs
        .iter()
        .enumerate()
        .map(|(j, (b, run))| match run {
            Ok(res) => {
                let value = hbic(dataset, res, gamma);
                if best.map_or(true, |(v, _)| value < v) {
                    best = Some((value, j));
                }
                HbicRow {
                    block_size: *b,
                    hbic: Some(value),
                    change_points: res.change_points.len(),
                    error: None,
                }
            }
            Err(e) => HbicRow {
                block_size: *b,
                hbic: None,
                change_points: 0,
                error: Some(e.to_string()),
            },
        })
        .collect();
    (best.map(|(_, j)| j), rows)
}

/// Run the pipeline for every candidate block size and keep the HBIC minimizer.
pub fn select_block_size(
    dataset: &Dataset,
    config: &HbicConfig,
    options: &DetectOptions,
) -> Result<(usize, DetectionResult)> {
    select_block_size_with(dataset, config, |domain| evaluate_block_sizes(dataset, domain, options))
}

/// [`select_block_size`] with a caller-supplied evaluator, which must return
/// one run per distinct domain entry in increasing order of size (as
/// [`evaluate_block_sizes`] does). Lets callers run the sizes concurrently.
pub fn select_block_size_with<F>(dataset: &Dataset, config: &HbicConfig, evaluate: F) -> Result<(usize, DetectionResult)>
where
    F: FnOnce(&[usize]) -> Vec<(usize, Result<DetectionResult>)>,
{
    if !(config.gamma > 0.0) || !config.gamma.is_finite() {
        return Err(TbflError::InvalidConfig(format!("gamma must be positive, got {}", config.gamma)));
    }
    let domain = match &config.domain {
        Some(d) if d.is_empty() => {
            return Err(TbflError::InvalidConfig("block size domain is empty".into()).at(Stage::BlockSelection))
        }
        Some(d) => d.clone(),
        None => default_search_domain(dataset.n(), dataset.p_x(), dataset.p_y())
            .map_err(|e| e.at(Stage::BlockSelection))?,
    };
    let runs = evaluate(&domain);
    let (choice, table) = choose_block_size(dataset, &runs, config.gamma);
    let Some(j) = choice else {
        let messages = runs
            .iter()
            .filter_map(|(b, r)| r.as_ref().err().map(|e| format!("b_n = {b}: {e}")))
            .collect();
        return Err(TbflError::Pipeline(messages));
    };
    let (b, run) = runs.into_iter().nth(j).expect("index from the same list");
    let mut result = run.expect("chosen run succeeded");
    result.hbic_table = Some(table);
    Ok((b, result))
}
