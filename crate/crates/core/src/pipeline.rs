// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end detection: block fused lasso, hard-thresholding, clustering,
//! exhaustive search and coefficient thresholding.

use serde::{Deserialize, Serialize};

use crate::block_select::{select_block_size, HbicConfig, HbicRow};
use crate::blocks::BlockPartition;
use crate::error::{Result, Stage, TbflError};
use crate::localization::{exhaustive_search, local_coefficients, threshold_coefficients, SearchWindow};
use crate::model::{reconstruct_precision, segment_rows, Dataset, ModelKind, PrecisionEstimate, SegmentCoefficients};
use crate::screening::{gap_cluster, select_candidates, CandidateSet, ClusterSet};
use crate::seed::derive_seed;
use crate::solver::{tune_lambdas, FusedLassoFit, LambdaGrid, SolverOptions};

/// Block size request: fixed, or chosen by HBIC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSize {
    Fixed(usize),
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectOptions {
    pub block_size: BlockSize,
    /// Length of the first and last blocks, when larger blocks are wanted near the ends.
    pub boundary_block_size: Option<usize>,
    /// Explicit penalty grids; each missing list uses the default log grid.
    pub lambda1_grid: Option<Vec<f64>>,
    pub lambda2_grid: Option<Vec<f64>>,
    pub solver: SolverOptions,
    pub gamma: f64,
    /// Candidate block sizes for `BlockSize::Auto`; `None` uses the default domain.
    pub search_domain: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            block_size: BlockSize::Auto,
            boundary_block_size: None,
            lambda1_grid: None,
            lambda2_grid: None,
            solver: SolverOptions::default(),
            gamma: crate::block_select::DEFAULT_GAMMA,
            search_domain: None,
            seed: 0,
        }
    }
}

impl DetectOptions {
    pub fn with_block_size(block_size: usize) -> Self {
        Self {
            block_size: BlockSize::Fixed(block_size),
            ..Self::default()
        }
    }
}

/// Hyper-parameters actually used by a detection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParameters {
    pub block_size: usize,
    pub boundary_block_size: Option<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub etas: Vec<f64>,
    pub seed: u64,
    pub gap_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    /// Final change points on the caller's time axis (dataset time plus any
    /// adapter offset), strictly increasing.
    pub change_points: Vec<usize>,
    pub candidates: CandidateSet,
    pub clusters: ClusterSet,
    /// Segment estimates; boundaries are on the dataset's own time axis.
    pub coefficients: SegmentCoefficients,
    pub fit: FusedLassoFit,
    pub partition: BlockPartition,
    pub hyper: HyperParameters,
    pub precision: Option<PrecisionEstimate>,
    /// HBIC per candidate block size when the size was selected automatically.
    pub hbic_table: Option<Vec<HbicRow>>,
    pub diagnostics: Vec<String>,
}

/// Run the full procedure.
pub fn detect(dataset: &Dataset, options: &DetectOptions) -> Result<DetectionResult> {
    match options.block_size {
        BlockSize::Fixed(b) => detect_with_block_size(dataset, b, options),
        BlockSize::Auto => {
            let config = HbicConfig {
                gamma: options.gamma,
                domain: options.search_domain.clone(),
            };
            let (_, result) = select_block_size(dataset, &config, options)?;
            Ok(result)
        }
    }
}

fn build_partition(n: usize, block_size: usize, boundary: Option<usize>) -> Result<BlockPartition> {
    match boundary {
        Some(bb) => BlockPartition::with_boundary_blocks(n, block_size, bb),
        None => BlockPartition::new(n, block_size),
    }
}

/// Run the full procedure at one block size.
pub fn detect_with_block_size(
    dataset: &Dataset,
    block_size: usize,
    options: &DetectOptions,
) -> Result<DetectionResult> {
    if !(options.gamma > 0.0) || !options.gamma.is_finite() {
        return Err(TbflError::InvalidConfig(format!("gamma must be positive, got {}", options.gamma)));
    }
    let n = dataset.n();
    let partition = build_partition(n, block_size, options.boundary_block_size).map_err(|e| e.at(Stage::Partition))?;
    let mut diagnostics = Vec::new();

    let grid = resolve_grid(dataset, &partition, options).map_err(|e| e.at(Stage::Solver))?;
    let tuned = tune_lambdas(dataset, &partition, &grid, &options.solver).map_err(|e| e.at(Stage::Solver))?;
    if !tuned.fit.converged {
        diagnostics.push(format!(
            "solver stopped at the iteration cap ({}) without meeting the tolerance",
            tuned.fit.iterations
        ));
    }
    let fit = tuned.fit;

    let candidates = select_candidates(&fit, &partition, dataset);
    let gap_seed = derive_seed(options.seed, "gap-statistic", 0);
    let mut clusters = gap_cluster(&candidates, block_size, n, gap_seed);

    // clusters whose search window is empty cannot produce a change point
    drop_clusters(&mut clusters, |j, c| {
        let empty = SearchWindow::new(c, block_size, n).is_empty(n);
        if empty {
            diagnostics.push(format!("cluster {j} dropped: empty search window"));
        }
        !empty
    });

    let (change_points, raw) = loop {
        let coeffs = local_coefficients(&fit, &clusters);
        let found = exhaustive_search(dataset, &clusters, &coeffs, block_size);
        if found.iter().all(Option::is_some) {
            break (found.into_iter().flatten().collect::<Vec<_>>(), coeffs);
        }
        let missing: Vec<usize> = (0..found.len()).filter(|&j| found[j].is_none()).collect();
        for j in &missing {
            diagnostics.push(format!("cluster {j} dropped: no admissible change point"));
        }
        drop_clusters(&mut clusters, |j, _| !missing.contains(&j));
    };

    let (thresholded, etas) = threshold_coefficients(&raw, dataset, &change_points);
    let residual_variances = segment_rows(&change_points, n)
        .into_iter()
        .zip(&thresholded)
        .map(|(rows, b)| dataset.residual_variances(rows, b))
        .collect();
    let coefficients = SegmentCoefficients {
        boundaries: change_points.clone(),
        raw,
        thresholded,
        thresholds: etas.clone(),
        residual_variances,
    };
    let precision = if dataset.kind() == ModelKind::Graphical {
        Some(reconstruct_precision(&coefficients, dataset).map_err(|e| e.at(Stage::Precision))?)
    } else {
        None
    };

    Ok(DetectionResult {
        change_points: change_points.iter().map(|t| t + dataset.time_offset()).collect(),
        candidates,
        clusters,
        coefficients,
        hyper: HyperParameters {
            block_size,
            boundary_block_size: options.boundary_block_size,
            lambda1: tuned.lambda1,
            lambda2: tuned.lambda2,
            gamma: options.gamma,
            etas,
            seed: options.seed,
            gap_seed,
        },
        fit,
        partition,
        precision,
        hbic_table: None,
        diagnostics,
    })
}

fn resolve_grid(dataset: &Dataset, partition: &BlockPartition, options: &DetectOptions) -> Result<LambdaGrid> {
    match (&options.lambda1_grid, &options.lambda2_grid) {
        (Some(l1), Some(l2)) => LambdaGrid::new(l1.clone(), l2.clone()),
        (l1, l2) => {
            let default = LambdaGrid::default_for(dataset, partition)?;
            LambdaGrid::new(
                l1.clone().unwrap_or(default.lambda1_values),
                l2.clone().unwrap_or(default.lambda2_values),
            )
        }
    }
}

fn drop_clusters(clusters: &mut ClusterSet, mut keep: impl FnMut(usize, &[usize]) -> bool) {
    let flags: Vec<bool> = clusters
        .clusters
        .iter()
        .enumerate()
        .map(|(j, c)| keep(j, c))
        .collect();
    let mut j = 0;
    clusters.clusters.retain(|_| {
        j += 1;
        flags[j - 1]
    });
    let mut j = 0;
    clusters.block_clusters.retain(|_| {
        j += 1;
        flags[j - 1]
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn three_segment_data(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1000;
        let y = DMatrix::from_fn(n, 20, |r, c| {
            let t = r + 1;
            let mean = match (t < 333, t < 666) {
                (true, _) if c < 2 => -2.0,
                (false, true) if (2..4).contains(&c) => 2.0,
                (false, false) if (4..6).contains(&c) => -2.0,
                _ => 0.0,
            };
            let e: f64 = StandardNormal.sample(&mut rng);
            mean + e
        });
        Dataset::mean_shift(y).unwrap()
    }

    #[test]
    fn finds_two_breaks_and_is_reproducible() {
        let ds = three_segment_data(1);
        let opts = DetectOptions::with_block_size(30);
        let a = detect(&ds, &opts).unwrap();
        assert_eq!(a.change_points.len(), 2, "{:?}", a.change_points);
        assert!((a.change_points[0] as i64 - 333).abs() <= 30);
        assert!((a.change_points[1] as i64 - 666).abs() <= 30);
        assert_eq!(a.coefficients.raw.len(), 3);
        let b = detect(&ds, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lag_offset_shifts_reported_times() {
        let ds = three_segment_data(2);
        let raw = ds.y().clone();
        let lagged = Dataset::lagged(raw, 1).unwrap();
        let mut opts = DetectOptions::with_block_size(30);
        opts.lambda1_grid = Some(vec![0.05, 0.01]);
        opts.lambda2_grid = Some(vec![0.01, 0.001]);
        let res = detect(&lagged, &opts).unwrap();
        assert_eq!(
            res.change_points,
            res.coefficients.boundaries.iter().map(|t| t + 1).collect::<Vec<_>>()
        );
    }

    #[test]
    fn invalid_block_size_is_stage_tagged() {
        let ds = three_segment_data(3);
        let err = detect(&ds, &DetectOptions::with_block_size(600)).unwrap_err();
        assert!(matches!(err, TbflError::Stage { stage: Stage::Partition, .. }));
        assert!(matches!(err.root(), TbflError::InvalidBlockSize { .. }));
    }
}
