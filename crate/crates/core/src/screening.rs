// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hard-thresholding of the block jumps and clustering of the surviving
//! candidate change points.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::BlockPartition;
use crate::localization::midpoint_estimates;
use crate::model::{segment_rows, Dataset};
use crate::seed::rng_for;
use crate::solver::FusedLassoFit;

/// Blocks kept by the hard-thresholding step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    /// 0-based block indices, increasing.
    pub indices: Vec<usize>,
    /// Start time of each kept block.
    pub times: Vec<usize>,
    /// A cutoff separating kept from dropped jump norms.
    pub threshold: f64,
    /// BIC of the empty set followed by each accepted peel.
    pub bic_trace: Vec<f64>,
}

/// Candidate change points grouped into clusters, one per estimated break.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Vec<usize>>,
    pub block_clusters: Vec<Vec<usize>>,
    pub kappa1: f64,
    pub kappa2: f64,
    /// Number of clusters picked by the gap statistic, before merging.
    pub gap_choice: usize,
}

/// Exact two-means split of a 1-D sample. Returns `(small, large)` index
/// sets; the large group is empty when all values coincide.
pub fn kmeans2_split(v: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| v[i]).collect();
    let m = sorted.len();
    let mut s1 = vec![0.0; m + 1];
    let mut s2 = vec![0.0; m + 1];
    for (i, x) in sorted.iter().enumerate() {
        s1[i + 1] = s1[i] + x;
        s2[i + 1] = s2[i] + x * x;
    }
    let sse = |a: usize, b: usize| {
        let len = (b - a) as f64;
        let s = s1[b] - s1[a];
        (s2[b] - s2[a] - s * s / len).max(0.0)
    };
    let mut best: Option<(f64, usize)> = None;
    for cut in 1..m {
        // only cut between distinct values so the groups are separated
        if sorted[cut - 1] == sorted[cut] {
            continue;
        }
        let cost = sse(0, cut) + sse(cut, m);
        if best.map_or(true, |(c, _)| cost < c) {
            best = Some((cost, cut));
        }
    }
    match best {
        None => (order, Vec::new()),
        Some((_, cut)) => {
            let mut small = order[..cut].to_vec();
            let mut large = order[cut..].to_vec();
            small.sort_unstable();
            large.sort_unstable();
            (small, large)
        }
    }
}

/// Gaussian BIC of the segmentation induced by a set of kept blocks.
fn segmentation_bic(
    dataset: &Dataset,
    partition: &BlockPartition,
    fit: &FusedLassoFit,
    kept: &[usize],
) -> f64 {
    let groups: Vec<Vec<usize>> = kept.iter().map(|&i| vec![i]).collect();
    let coefs = midpoint_estimates(&fit.theta, &groups);
    let times: Vec<usize> = kept.iter().map(|&i| partition.start_time(i)).collect();
    let n = dataset.n();
    let rss: f64 = segment_rows(&times, n)
        .into_iter()
        .zip(&coefs)
        .map(|(rows, b)| dataset.rss(rows, b))
        .sum();
    let df = coefs.iter().map(count_nonzero).sum::<usize>();
    gaussian_bic(rss, n * dataset.p_y(), df, (n as f64).ln())
}

pub(crate) fn count_nonzero(m: &DMatrix<f64>) -> usize {
    m.iter().filter(|v| **v != 0.0).count()
}

/// `N log(RSS/N) + penalty * df`, with `-inf` for a perfect fit.
pub(crate) fn gaussian_bic(rss: f64, count: usize, df: usize, penalty: f64) -> f64 {
    let count = count as f64;
    let fit = if rss > 0.0 {
        count * (rss / count).ln()
    } else {
        f64::NEG_INFINITY
    };
    fit + penalty * df as f64
}

/// Peel the large two-means group off the jump norms while the BIC of the
/// induced segmentation strictly decreases. The baseline is the BIC with no
/// change point.
pub fn select_candidates(
    fit: &FusedLassoFit,
    partition: &BlockPartition,
    dataset: &Dataset,
) -> CandidateSet {
    let v = &fit.jump_norms;
    let mut pool: Vec<usize> = (0..v.len()).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut bic_old = segmentation_bic(dataset, partition, fit, &kept);
    let mut trace = vec![bic_old];
    while pool.len() >= 2 {
        let values: Vec<f64> = pool.iter().map(|&i| v[i]).collect();
        let (small, large) = kmeans2_split(&values);
        if large.is_empty() {
            break;
        }
        let mut next = kept.clone();
        next.extend(large.iter().map(|&j| pool[j]).filter(|&i| i > 0 && v[i] > 0.0));
        next.sort_unstable();
        if next.len() == kept.len() {
            break;
        }
        let bic_new = segmentation_bic(dataset, partition, fit, &next);
        if !(bic_new < bic_old) {
            break;
        }
        kept = next;
        bic_old = bic_new;
        trace.push(bic_new);
        pool = small.iter().map(|&j| pool[j]).collect();
    }

    let smallest_kept = kept.iter().map(|&i| v[i]).fold(f64::INFINITY, f64::min);
    let largest_dropped = (0..v.len())
        .filter(|i| !kept.contains(i))
        .map(|i| v[i])
        .fold(0.0f64, f64::max);
    let threshold = if kept.is_empty() {
        largest_dropped
    } else {
        0.5 * (smallest_kept + largest_dropped)
    };
    CandidateSet {
        times: kept.iter().map(|&i| partition.start_time(i)).collect(),
        indices: kept,
        threshold,
        bic_trace: trace,
    }
}

/// Optimal 1-D k-means of sorted data for every `k` in `1..=k_max`, by dynamic
/// programming. Entry `k - 1` holds the within-cluster sum of squares and the
/// start index of each cluster.
pub fn kmeans1d_all(sorted: &[f64], k_max: usize) -> Vec<(f64, Vec<usize>)> {
    let m = sorted.len();
    let k_max = k_max.min(m);
    let mut s1 = vec![0.0; m + 1];
    let mut s2 = vec![0.0; m + 1];
    for (i, x) in sorted.iter().enumerate() {
        s1[i + 1] = s1[i] + x;
        s2[i + 1] = s2[i] + x * x;
    }
    let cost = |a: usize, b: usize| {
        let len = (b - a) as f64;
        let s = s1[b] - s1[a];
        (s2[b] - s2[a] - s * s / len).max(0.0)
    };
    // best[k][j]: optimal cost of the first j points in k clusters
    let mut best = vec![vec![f64::INFINITY; m + 1]; k_max + 1];
    let mut arg = vec![vec![0usize; m + 1]; k_max + 1];
    best[0][0] = 0.0;
    for k in 1..=k_max {
        for j in k..=m {
            for i in (k - 1)..j {
                let c = best[k - 1][i] + cost(i, j);
                if c < best[k][j] {
                    best[k][j] = c;
                    arg[k][j] = i;
                }
            }
        }
    }
    (1..=k_max)
        .map(|k| {
            let mut starts = vec![0; k];
            let mut j = m;
            for kk in (1..=k).rev() {
                let i = arg[kk][j];
                starts[kk - 1] = i;
                j = i;
            }
            (best[k][m], starts)
        })
        .collect()
}

/// `(kappa1, kappa2)` for a block size on `n` observations.
pub fn kappa_rule(block_size: usize, n: usize) -> (f64, f64) {
    let root = (n as f64).sqrt();
    let b = block_size as f64;
    if b <= root / 4.0 {
        (9.0, 7.0)
    } else if b <= root / 2.0 {
        (7.0, 5.0)
    } else {
        (5.0, 3.0)
    }
}

pub const GAP_REFERENCE_DRAWS: usize = 50;

fn split_groups<T: Copy>(items: &[T], starts: &[usize]) -> Vec<Vec<T>> {
    let mut out = Vec::with_capacity(starts.len());
    for (j, &s) in starts.iter().enumerate() {
        let e = starts.get(j + 1).copied().unwrap_or(items.len());
        out.push(items[s..e].to_vec());
    }
    out
}

/// Cluster candidate times. The number of clusters maximizes the gap
/// statistic among clusterings whose diameters are at most `kappa1 * b_n`;
/// consecutive clusters separated by at most `kappa2 * b_n` are then merged.
pub fn gap_cluster(candidates: &CandidateSet, block_size: usize, n: usize, seed: u64) -> ClusterSet {
    let (kappa1, kappa2) = kappa_rule(block_size, n);
    let mut pairs: Vec<(usize, usize)> = candidates
        .times
        .iter()
        .copied()
        .zip(candidates.indices.iter().copied())
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let m = pairs.len();
    if m == 0 {
        return ClusterSet {
            kappa1,
            kappa2,
            ..ClusterSet::default()
        };
    }
    let values: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
    let solutions = kmeans1d_all(&values, m);

    let (lo, hi) = (values[0], values[m - 1]);
    let delta = 1e-8 * (hi - lo).max(1.0).powi(2);
    let mut reference = vec![0.0; m];
    let mut rng = rng_for(seed, "gap-reference", 0);
    for _ in 0..GAP_REFERENCE_DRAWS {
        let mut draw: Vec<f64> = (0..m)
            .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
            .collect();
        draw.sort_by(f64::total_cmp);
        for (k, (w, _)) in kmeans1d_all(&draw, m).iter().enumerate() {
            reference[k] += (w + delta).ln();
        }
    }
    let gap: Vec<f64> = solutions
        .iter()
        .enumerate()
        .map(|(k, (w, _))| reference[k] / GAP_REFERENCE_DRAWS as f64 - (w + delta).ln())
        .collect();

    let mut ranking: Vec<usize> = (0..m).collect();
    ranking.sort_by(|&a, &b| gap[b].total_cmp(&gap[a]).then(a.cmp(&b)));
    let limit = kappa1 * block_size as f64;
    let fits = |k: usize| {
        split_groups(&values, &solutions[k].1)
            .iter()
            .all(|g| g[g.len() - 1] - g[0] <= limit)
    };
    // k = m always qualifies (singletons), so the search cannot come up empty
    let chosen = ranking.into_iter().find(|&k| fits(k)).unwrap_or(m - 1);
    let groups = split_groups(&pairs, &solutions[chosen].1);

    let merge_gap = kappa2 * block_size as f64;
    let mut merged: Vec<Vec<(usize, usize)>> = Vec::new();
    for g in groups {
        match merged.last_mut() {
            Some(prev) if (g[0].0 - prev[prev.len() - 1].0) as f64 <= merge_gap => prev.extend(g),
            _ => merged.push(g),
        }
    }
    ClusterSet {
        clusters: merged.iter().map(|g| g.iter().map(|p| p.0).collect()).collect(),
        block_clusters: merged.iter().map(|g| g.iter().map(|p| p.1).collect()).collect(),
        kappa1,
        kappa2,
        gap_choice: chosen + 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::ThetaStack;
    use proptest::prelude::*;

    #[test]
    fn kmeans2_examples() {
        assert_eq!(kmeans2_split(&[0.0, 0.0, 0.0, 10.0, 10.0]), (vec![0, 1, 2], vec![3, 4]));
        assert_eq!(kmeans2_split(&[2.0, 2.0, 2.0]), (vec![0, 1, 2], vec![]));
        assert_eq!(kmeans2_split(&[0.0, 5.0]), (vec![0], vec![1]));
    }

    /// Enumerate every split of the sorted values and compare costs.
    fn brute_split_cost(v: &[f64]) -> f64 {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let sse = |g: &[f64]| {
            let mean = g.iter().sum::<f64>() / g.len() as f64;
            g.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
        };
        (1..s.len())
            .filter(|&c| s[c - 1] < s[c])
            .map(|c| sse(&s[..c]) + sse(&s[c..]))
            .fold(f64::INFINITY, f64::min)
    }

    fn brute_kmeans(v: &[f64], k: usize) -> f64 {
        // all ways to cut sorted data into k contiguous groups
        fn rec(v: &[f64], k: usize) -> f64 {
            let sse = |g: &[f64]| {
                let mean = g.iter().sum::<f64>() / g.len() as f64;
                g.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
            };
            if k == 1 {
                return sse(v);
            }
            (1..=v.len() - (k - 1))
                .map(|c| sse(&v[..c]) + rec(&v[c..], k - 1))
                .fold(f64::INFINITY, f64::min)
        }
        rec(v, k)
    }

    fn mean_shift_fit(norms: &[f64]) -> (Dataset, BlockPartition, FusedLassoFit) {
        let k = norms.len();
        let n = 10 * k;
        let jumps: Vec<DMatrix<f64>> = norms.iter().map(|v| DMatrix::from_element(1, 1, *v)).collect();
        let theta = ThetaStack::from_jumps(jumps);
        let part = BlockPartition::new(n, 10).unwrap();
        let y = DMatrix::from_fn(n, 1, |t, _| {
            let noise = ((t * 7919) % 13) as f64 / 13.0 - 0.5;
            theta.cumulative()[part.block_of(t + 1)][(0, 0)] + 0.2 * noise
        });
        let ds = Dataset::mean_shift(y).unwrap();
        let fit = FusedLassoFit {
            jump_norms: theta.jump_norms(),
            theta,
            lambda1: 0.0,
            lambda2: 0.0,
            objective_trace: vec![],
            converged: true,
            iterations: 0,
        };
        (ds, part, fit)
    }

    #[test]
    fn zero_jumps_give_no_candidates() {
        let (ds, part, fit) = mean_shift_fit(&[0.0; 6]);
        let c = select_candidates(&fit, &part, &ds);
        assert!(c.indices.is_empty() && c.times.is_empty());
    }

    #[test]
    fn single_spike_is_kept() {
        let (ds, part, fit) = mean_shift_fit(&[0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
        let c = select_candidates(&fit, &part, &ds);
        assert_eq!(c.indices, vec![3]);
        assert_eq!(c.times, vec![31]);
        assert!(c.threshold > 0.0 && c.threshold < 3.0);
    }

    fn candidates(times: &[usize]) -> CandidateSet {
        CandidateSet {
            indices: times.iter().map(|t| t / 30).collect(),
            times: times.to_vec(),
            threshold: 0.0,
            bic_trace: vec![],
        }
    }

    #[test]
    fn gap_cluster_examples() {
        let one = gap_cluster(&candidates(&[400]), 30, 1000, 1);
        assert_eq!(one.clusters, vec![vec![400]]);
        let joined = gap_cluster(&candidates(&[300, 330]), 30, 1000, 1);
        assert_eq!(joined.clusters, vec![vec![300, 330]]);
        assert_eq!((joined.kappa1, joined.kappa2), (5.0, 3.0));
        let apart = gap_cluster(&candidates(&[330, 660]), 30, 1000, 1);
        assert_eq!(apart.clusters, vec![vec![330], vec![660]]);
        assert!(gap_cluster(&candidates(&[]), 30, 1000, 1).clusters.is_empty());
    }

    #[test]
    fn kappa_rules() {
        assert_eq!(kappa_rule(7, 1000), (9.0, 7.0));
        assert_eq!(kappa_rule(15, 1000), (7.0, 5.0));
        assert_eq!(kappa_rule(30, 1000), (5.0, 3.0));
    }

    proptest! {
        #[test]
        fn kmeans2_is_optimal(v in prop::collection::vec(0.0f64..10.0, 2..12)) {
            let (small, large) = kmeans2_split(&v);
            prop_assume!(!large.is_empty());
            let sse = |idx: &[usize]| {
                let mean = idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64;
                idx.iter().map(|&i| (v[i] - mean).powi(2)).sum::<f64>()
            };
            let ours = sse(&small) + sse(&large);
            prop_assert!((ours - brute_split_cost(&v)).abs() <= 1e-9);
            let max_small = small.iter().map(|&i| v[i]).fold(f64::MIN, f64::max);
            let min_large = large.iter().map(|&i| v[i]).fold(f64::MAX, f64::min);
            prop_assert!(max_small < min_large);
        }

        #[test]
        fn kmeans1d_matches_enumeration(mut v in prop::collection::vec(0.0f64..100.0, 1..9)) {
            v.sort_by(f64::total_cmp);
            for (k, (w, starts)) in kmeans1d_all(&v, v.len()).iter().enumerate() {
                prop_assert!((w - brute_kmeans(&v, k + 1)).abs() <= 1e-7 * (1.0 + w));
                prop_assert_eq!(starts.len(), k + 1);
                prop_assert_eq!(starts[0], 0);
            }
        }

        #[test]
        fn peel_is_monotone(norms in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..4.0], 4..14)) {
            let (ds, part, fit) = mean_shift_fit(&norms);
            let c = select_candidates(&fit, &part, &ds);
            let v = &fit.jump_norms;
            for &i in &c.indices {
                prop_assert!(v[i] > 0.0 && i > 0);
                for j in 0..v.len() {
                    if !c.indices.contains(&j) {
                        prop_assert!(v[i] >= v[j]);
                    }
                }
            }
        }

        #[test]
        fn clusters_respect_bounds(times in prop::collection::btree_set(2usize..1000, 1..12),
                                   seed in 0u64..100, shuffle in 0u64..1000) {
            let sorted: Vec<usize> = times.iter().copied().collect();
            let mut shuffled = sorted.clone();
            let r = (shuffle as usize) % shuffled.len();
            shuffled.rotate_left(r);
            let a = gap_cluster(&candidates(&sorted), 20, 1000, seed);
            let b = gap_cluster(&candidates(&shuffled), 20, 1000, seed);
            prop_assert_eq!(&a, &b);
            for w in a.clusters.windows(2) {
                prop_assert!((w[1][0] - w[0][w[0].len() - 1]) as f64 > a.kappa2 * 20.0);
            }
            let flat: Vec<usize> = a.clusters.concat();
            prop_assert_eq!(flat, sorted);
            if a.clusters.len() == a.gap_choice {
                for c in &a.clusters {
                    prop_assert!((c[c.len() - 1] - c[0]) as f64 <= a.kappa1 * 20.0);
                }
            }
        }
    }
}
