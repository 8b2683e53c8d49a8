// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simulation scenarios and their data generators.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TbflError};
use crate::model::Dataset;
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    MeanShift,
    Regression,
    Graphical,
}

/// Law of the nonzero coefficient entries, indexed by segment (cycling).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueLaw {
    Fixed(Vec<f64>),
    Uniform(Vec<(f64, f64)>),
}

/// How the support of each segment relates to the previous one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportRule {
    Fresh,
    DisjointFromPrevious,
    Shared,
}

/// Per-segment precision matrices for the graphical family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionLaw {
    /// `Omega(l,k) = rho^|l-k|` within the bandwidth; `rho` cycles over segments.
    Toeplitz { rho: Vec<f64>, bandwidth: usize },
    /// Fresh random graph per segment with the given edge probability
    /// (`None`: `2/p`).
    ErdosRenyi { edge_probability: Option<f64> },
    /// Row-major matrices used as given, cycling over segments.
    Explicit { matrices: Vec<Vec<Vec<f64>>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub family: Family,
    pub n: usize,
    /// Mean-shift and graphical: dimension. Regression: number of predictors.
    pub p: usize,
    /// Regression only: number of responses.
    #[serde(default = "one")]
    pub responses: usize,
    /// True change points, 1-based, strictly increasing.
    pub change_points: Vec<usize>,
    /// Nonzero coefficient entries per segment.
    #[serde(default)]
    pub sparsity: usize,
    #[serde(default = "default_values")]
    pub values: ValueLaw,
    #[serde(default = "default_support")]
    pub support: SupportRule,
    #[serde(default)]
    pub precision: Option<PrecisionLaw>,
    /// Noise standard deviation (covariance `noise_sd^2 I`); unused for graphical.
    #[serde(default = "unit")]
    pub noise_sd: f64,
    /// Fixed block size; `None` selects it by HBIC over `search_domain`.
    pub block_size: Option<usize>,
    #[serde(default)]
    pub boundary_block_size: Option<usize>,
    #[serde(default)]
    pub search_domain: Option<Vec<usize>>,
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn default_values() -> ValueLaw {
    ValueLaw::Fixed(vec![1.0])
}

fn default_support() -> SupportRule {
    SupportRule::Fresh
}

/// `floor(j n / (m0 + 1))` for `j = 1..=m0`.
pub fn equally_spaced(n: usize, m0: usize) -> Vec<usize> {
    (1..=m0).map(|j| j * n / (m0 + 1)).collect()
}

/// Simulated data with its ground truth.
#[derive(Clone, Debug)]
pub struct Generated {
    pub dataset: Dataset,
    pub change_points: Vec<usize>,
    /// True segment coefficients in the dataset's `(p_y, p_x)` shape.
    pub coefficients: Vec<DMatrix<f64>>,
    /// True precision matrices (graphical family only).
    pub precision: Option<Vec<DMatrix<f64>>>,
}

impl ScenarioSpec {
    pub fn m0(&self) -> usize {
        self.change_points.len()
    }

    fn shape(&self) -> (usize, usize) {
        match self.family {
            Family::MeanShift => (self.p, 1),
            Family::Regression => (self.responses, self.p),
            Family::Graphical => (self.p, self.p),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TbflError::InvalidSpec(msg));
        if self.n < 4 || self.p == 0 || self.responses == 0 {
            return bad(format!("{}: need n >= 4 and positive dimensions", self.name));
        }
        let mut prev = 1;
        for &t in &self.change_points {
            if t <= prev || t > self.n {
                return bad(format!("{}: change points must be strictly increasing inside (1, n]", self.name));
            }
            prev = t;
        }
        let (py, px) = self.shape();
        if self.family != Family::Graphical {
            if self.sparsity > py * px {
                return bad(format!("{}: sparsity {} exceeds {} coefficients", self.name, self.sparsity, py * px));
            }
            if self.support == SupportRule::DisjointFromPrevious && 2 * self.sparsity > py * px {
                return bad(format!("{}: disjoint supports need 2 d <= {}", self.name, py * px));
            }
            let empty = match &self.values {
                ValueLaw::Fixed(v) => v.is_empty(),
                ValueLaw::Uniform(r) => r.is_empty() || r.iter().any(|(a, b)| !(a < b)),
            };
            if empty {
                return bad(format!("{}: coefficient law needs at least one value or a proper range", self.name));
            }
        } else {
            match &self.precision {
                None => return bad(format!("{}: graphical scenarios need a precision law", self.name)),
                Some(PrecisionLaw::Explicit { matrices }) => {
                    let square = |m: &Vec<Vec<f64>>| m.len() == self.p && m.iter().all(|r| r.len() == self.p);
                    if matrices.is_empty() || !matrices.iter().all(square) {
                        return bad(format!("{}: explicit precision matrices must be {p} x {p}", self.name, p = self.p));
                    }
                }
                Some(PrecisionLaw::Toeplitz { rho, .. }) if rho.is_empty() => {
                    return bad(format!("{}: Toeplitz law needs at least one rho", self.name))
                }
                Some(_) => {}
            }
        }
        if !(self.noise_sd >= 0.0) {
            return bad(format!("{}: noise_sd must be nonnegative", self.name));
        }
        Ok(())
    }
}

fn draw_value(law: &ValueLaw, segment: usize, rng: &mut ChaCha8Rng) -> f64 {
    match law {
        ValueLaw::Fixed(v) => v[segment % v.len()],
        ValueLaw::Uniform(r) => {
            let (a, b) = r[segment % r.len()];
            rng.random_range(a..b)
        }
    }
}

fn sparse_coefficients(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    let (py, px) = spec.shape();
    let size = py * px;
    let d = spec.sparsity;
    let mut out = Vec::with_capacity(spec.m0() + 1);
    let mut prev: Vec<usize> = Vec::new();
    let shared: Vec<usize> = sample(rng, size, d).into_vec();
    for j in 0..=spec.m0() {
        let support: Vec<usize> = match spec.support {
            SupportRule::Shared => shared.clone(),
            SupportRule::Fresh => sample(rng, size, d).into_vec(),
            SupportRule::DisjointFromPrevious => {
                let free: Vec<usize> = (0..size).filter(|i| !prev.contains(i)).collect();
                sample(rng, free.len(), d).into_iter().map(|i| free[i]).collect()
            }
        };
        let mut b = DMatrix::zeros(py, px);
        let mut sorted = support.clone();
        sorted.sort_unstable();
        for idx in sorted {
            // row-major over (response, predictor)
            b[(idx / px, idx % px)] = draw_value(&spec.values, j, rng);
        }
        prev = support;
        out.push(b);
    }
    out
}

/// Smallest eigenvalue of a symmetric matrix.
fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

pub const EIGEN_FLOOR: f64 = 0.1;

/// Banded Toeplitz precision `rho^|l-k|` (`|l-k| <= bandwidth`), with the
/// diagonal raised if needed so the smallest eigenvalue is at least 0.1.
pub fn toeplitz_precision(p: usize, rho: f64, bandwidth: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::from_fn(p, p, |l, k| {
        let d = l.abs_diff(k);
        if d <= bandwidth {
            rho.powi(d as i32)
        } else {
            0.0
        }
    });
    let lo = min_eigenvalue(&omega);
    if lo < EIGEN_FLOOR {
        for l in 0..p {
            omega[(l, l)] += EIGEN_FLOOR - lo;
        }
    }
    omega
}

/// Random sparse precision: symmetric edges with probability `prob`,
/// magnitudes uniform in `[0.3, 0.5]` with random signs, and a diagonally
/// dominant diagonal (row absolute sum plus 0.1).
pub fn erdos_renyi_precision(p: usize, prob: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut omega = DMatrix::<f64>::zeros(p, p);
    for l in 0..p {
        for k in (l + 1)..p {
            if rng.random_bool(prob) {
                let mag = rng.random_range(0.3..=0.5);
                let v = if rng.random_bool(0.5) { mag } else { -mag };
                omega[(l, k)] = v;
                omega[(k, l)] = v;
            }
        }
    }
    for l in 0..p {
        let off: f64 = (0..p).filter(|&k| k != l).map(|k| omega[(l, k)].abs()).sum();
        omega[(l, l)] = off + EIGEN_FLOOR;
    }
    omega
}

/// Neighborhood regression coefficients `A(l,k) = -Omega(l,k) / Omega(l,l)`.
pub fn neighborhood_coefficients(omega: &DMatrix<f64>) -> DMatrix<f64> {
    let p = omega.nrows();
    DMatrix::from_fn(p, p, |l, k| if l == k { 0.0 } else { -omega[(l, k)] / omega[(l, l)] })
}

fn segment_of(t: usize, change_points: &[usize]) -> usize {
    change_points.partition_point(|&c| c <= t)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw one dataset from the scenario, deterministically from its seed.
pub fn generate(spec: &ScenarioSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, "generate", 0);
    let n = spec.n;
    let cps = &spec.change_points;
    match spec.family {
        Family::MeanShift => {
            let mus = sparse_coefficients(spec, &mut rng);
            let mut y = DMatrix::zeros(n, spec.p);
            for r in 0..n {
                let mu = &mus[segment_of(r + 1, cps)];
                for c in 0..spec.p {
                    y[(r, c)] = mu[(c, 0)] + spec.noise_sd * normal(&mut rng);
                }
            }
            Ok(Generated {
                dataset: Dataset::mean_shift(y)?,
                change_points: cps.clone(),
                coefficients: mus,
                precision: None,
            })
        }
        Family::Regression => {
            let betas = sparse_coefficients(spec, &mut rng);
            let x = DMatrix::from_fn(n, spec.p, |_, _| 0.0);
            let mut x = x;
            for r in 0..n {
                for c in 0..spec.p {
                    x[(r, c)] = normal(&mut rng);
                }
            }
            let mut y = DMatrix::zeros(n, spec.responses);
            for r in 0..n {
                let beta = &betas[segment_of(r + 1, cps)];
                let xr = x.row(r).transpose();
                let mean = beta * xr;
                for l in 0..spec.responses {
                    y[(r, l)] = mean[l] + spec.noise_sd * normal(&mut rng);
                }
            }
            Ok(Generated {
                dataset: Dataset::regression(x, y)?,
                change_points: cps.clone(),
                coefficients: betas,
                precision: None,
            })
        }
        Family::Graphical => {
            let p = spec.p;
            let law = spec.precision.as_ref().expect("validated");
            let omegas: Vec<DMatrix<f64>> = (0..=spec.m0())
                .map(|j| match law {
                    PrecisionLaw::Toeplitz { rho, bandwidth } => toeplitz_precision(p, rho[j % rho.len()], *bandwidth),
                    PrecisionLaw::ErdosRenyi { edge_probability } => {
                        let prob = edge_probability.unwrap_or(2.0 / p as f64).clamp(0.0, 1.0);
                        erdos_renyi_precision(p, prob, &mut rng)
                    }
                    PrecisionLaw::Explicit { matrices } => {
                        let m = &matrices[j % matrices.len()];
                        DMatrix::from_fn(p, p, |l, k| m[l][k])
                    }
                })
                .collect();
            // x = L^{-T} z has covariance (L L^T)^{-1} = Omega^{-1}
            let mut factors = Vec::with_capacity(omegas.len());
            for (j, omega) in omegas.iter().enumerate() {
                let chol = Cholesky::new(omega.clone()).ok_or_else(|| {
                    TbflError::InvalidSpec(format!("{}: precision matrix {j} is not positive definite", spec.name))
                })?;
                factors.push(chol.l().transpose());
            }
            let mut x = DMatrix::zeros(n, p);
            for r in 0..n {
                let z = DVector::from_fn(p, |_, _| normal(&mut rng));
                let lt = &factors[segment_of(r + 1, cps)];
                let xr = lt
                    .solve_upper_triangular(&z)
                    .expect("Cholesky factor has a positive diagonal");
                for c in 0..p {
                    x[(r, c)] = xr[c];
                }
            }
            Ok(Generated {
                dataset: Dataset::graphical(x)?,
                change_points: cps.clone(),
                coefficients: omegas.iter().map(neighborhood_coefficients).collect(),
                precision: Some(omegas),
            })
        }
    }
}

/// Built-in scenarios by identifier. `m0` applies to scenario `a` only.
pub fn builtin(id: &str, m0: Option<usize>, seed: u64) -> Result<ScenarioSpec> {
    let uniform = |r: &[(f64, f64)]| ValueLaw::Uniform(r.to_vec());
    let spec = match id {
        "g" => ScenarioSpec {
            name: "g".into(),
            family: Family::MeanShift,
            n: 1000,
            p: 20,
            responses: 1,
            change_points: vec![333, 666],
            sparsity: 2,
            values: ValueLaw::Fixed(vec![-2.0, 2.0, -2.0]),
            support: SupportRule::DisjointFromPrevious,
            precision: None,
            noise_sd: 1.0,
            block_size: Some(30),
            boundary_block_size: None,
            search_domain: None,
            seed,
        },
        "null" => ScenarioSpec {
            name: "null".into(),
            change_points: vec![],
            ..builtin("g", None, seed)?
        },
        "a" => {
            let m0 = m0.unwrap_or(2);
            ScenarioSpec {
                name: format!("a-m{m0}"),
                family: Family::MeanShift,
                n: 5000,
                p: 20,
                responses: 1,
                change_points: equally_spaced(5000, m0),
                sparsity: 2,
                values: uniform(&[(-1.0, -0.5), (0.5, 1.0)]),
                support: SupportRule::Fresh,
                precision: None,
                noise_sd: 1.0,
                block_size: None,
                boundary_block_size: None,
                search_domain: Some(vec![30, 40, 50, 60, 70]),
                seed,
            }
        }
        "b2" => ScenarioSpec {
            name: "b2".into(),
            family: Family::MeanShift,
            n: 1000,
            p: 100,
            responses: 1,
            change_points: vec![333, 666],
            sparsity: 10,
            values: uniform(&[(-1.0, -0.5), (0.5, 1.0), (-1.0, 0.5)]),
            support: SupportRule::Fresh,
            precision: None,
            noise_sd: 1.0,
            block_size: Some(31),
            boundary_block_size: None,
            search_domain: None,
            seed,
        },
        "c1" => ScenarioSpec {
            name: "c1".into(),
            family: Family::Regression,
            n: 2000,
            p: 150,
            responses: 1,
            change_points: vec![500, 1000, 1500],
            sparsity: 15,
            values: ValueLaw::Fixed(vec![-3.0, 5.0, -3.0, 3.0]),
            support: SupportRule::Fresh,
            precision: None,
            noise_sd: 1.0,
            block_size: Some(40),
            boundary_block_size: None,
            search_domain: None,
            seed,
        },
        "c1-half" => ScenarioSpec {
            name: "c1-half".into(),
            n: 1000,
            p: 75,
            change_points: vec![250, 500, 750],
            ..builtin("c1", None, seed)?
        },
        "c4" => ScenarioSpec {
            name: "c4".into(),
            family: Family::Regression,
            n: 1000,
            p: 200,
            responses: 1,
            change_points: vec![500],
            sparsity: 12,
            values: ValueLaw::Fixed(vec![-1.0, 1.0]),
            support: SupportRule::Fresh,
            precision: None,
            noise_sd: 0.1,
            block_size: Some(30),
            boundary_block_size: Some(120),
            search_domain: None,
            seed,
        },
        "d1" | "d2" | "d3" => {
            let (p, law) = match id {
                "d1" => (50, PrecisionLaw::ErdosRenyi { edge_probability: None }),
                "d2" => (30, PrecisionLaw::Toeplitz { rho: vec![0.4, -0.4], bandwidth: 2 }),
                _ => (50, PrecisionLaw::Toeplitz { rho: vec![0.4, -0.4], bandwidth: 2 }),
            };
            ScenarioSpec {
                name: id.into(),
                family: Family::Graphical,
                n: 3000,
                p,
                responses: 1,
                change_points: vec![1000, 2000],
                sparsity: 0,
                values: ValueLaw::Fixed(vec![1.0]),
                support: SupportRule::Fresh,
                precision: Some(law),
                noise_sd: 1.0,
                block_size: Some(50),
                boundary_block_size: None,
                search_domain: None,
                seed,
            }
        }
        other => return Err(TbflError::InvalidSpec(format!("unknown scenario '{other}'"))),
    };
    spec.validate()?;
    Ok(spec)
}

pub const BUILTIN_SCENARIOS: &[&str] = &["g", "null", "a", "b2", "c1", "c1-half", "c4", "d1", "d2", "d3"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_segment_jumps_have_norm_four() {
        let g = generate(&builtin("g", None, 5).unwrap()).unwrap();
        for w in g.coefficients.windows(2) {
            assert!(((&w[1] - &w[0]).norm() - 4.0).abs() < 1e-12);
        }
        assert_eq!(g.dataset.n(), 1000);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        for id in ["b2", "c4", "d2"] {
            let a = generate(&builtin(id, None, 11).unwrap()).unwrap();
            let b = generate(&builtin(id, None, 11).unwrap()).unwrap();
            assert_eq!(a.dataset, b.dataset);
            assert_eq!(a.coefficients, b.coefficients);
        }
    }

    #[test]
    fn zero_noise_is_exactly_piecewise() {
        let mut spec = builtin("c4", None, 1).unwrap();
        spec.noise_sd = 0.0;
        let g = generate(&spec).unwrap();
        let ds = &g.dataset;
        for r in [0, 498, 499, 999] {
            let beta = &g.coefficients[segment_of(r + 1, &g.change_points)];
            let expect = beta * ds.x().row(r).transpose();
            assert_eq!(ds.y()[(r, 0)], expect[0]);
        }
    }

    #[test]
    fn toeplitz_inverse_checks_out() {
        let omega = toeplitz_precision(4, 0.4, 2);
        let sigma = omega.clone().try_inverse().unwrap();
        let prod = &sigma * &omega;
        assert!((prod - DMatrix::identity(4, 4)).abs().max() < 1e-10);
        assert_eq!(omega[(0, 2)], 0.4f64.powi(2));
        assert_eq!(omega[(0, 3)], 0.0);
    }

    #[test]
    fn erdos_renyi_is_positive_definite() {
        let mut rng = rng_for(3, "er", 0);
        let omega = erdos_renyi_precision(50, 0.04, &mut rng);
        assert!(min_eigenvalue(&omega) >= EIGEN_FLOOR - 1e-12);
        assert_eq!(omega, omega.transpose());
    }

    #[test]
    fn non_positive_definite_is_rejected() {
        let mut spec = builtin("d2", None, 1).unwrap();
        spec.p = 2;
        spec.precision = Some(PrecisionLaw::Explicit {
            matrices: vec![vec![vec![1.0, 2.0], vec![2.0, 1.0]]],
        });
        assert!(matches!(generate(&spec), Err(TbflError::InvalidSpec(_))));
        // the Toeplitz builder repairs its spectrum instead
        spec.precision = Some(PrecisionLaw::Toeplitz { rho: vec![-1.5], bandwidth: 1 });
        assert!(generate(&spec).is_ok());
        assert!(matches!(builtin("zz", None, 1), Err(TbflError::InvalidSpec(_))));
    }

    #[test]
    fn structure_follows_the_spec_across_seeds() {
        for seed in 0..5 {
            let g = generate(&builtin("b2", None, seed).unwrap()).unwrap();
            assert_eq!(g.change_points, vec![333, 666]);
            for (j, b) in g.coefficients.iter().enumerate() {
                assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 10);
                let (lo, hi) = [(-1.0, -0.5), (0.5, 1.0), (-1.0, 0.5)][j];
                assert!(b.iter().filter(|v| **v != 0.0).all(|v| *v >= lo && *v < hi));
            }
        }
    }

    #[test]
    fn precision_sampling_matches_covariance() {
        let mut spec = builtin("d2", None, 2).unwrap();
        spec.p = 4;
        spec.n = 40_000;
        spec.change_points = vec![];
        let g = generate(&spec).unwrap();
        let x = g.dataset.x();
        let emp = x.transpose() * x / spec.n as f64;
        let sigma = g.precision.unwrap()[0].clone().try_inverse().unwrap();
        assert!((emp - sigma).abs().max() < 0.05);
    }
}
