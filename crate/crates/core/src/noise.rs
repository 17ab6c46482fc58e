//! Trace-class Q-Wiener noise in the eigenbasis of `A`.
//!
//! `W(t) = Σ_k √λ_k β_k(t) e_k`. Each path draws from its own ChaCha8 stream,
//! selected by the master seed and the path index, so ensembles are reproducible
//! regardless of generation order. Gaussians come from the ziggurat sampler
//! behind `rand_distr::StandardNormal`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::path::{TimeGrid, Trajectory};

/// Covariance `Q = diag(λ_1, …, λ_N)` and the master seed.
#[derive(Clone, Debug, PartialEq)]
pub struct QWiener {
    lambdas: Vec<f64>,
    seed: u64,
}

impl QWiener {
    pub fn new(lambdas: Vec<f64>, seed: u64) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Shape("Q needs at least one mode".into()));
        }
        if let Some(k) = lambdas.iter().position(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::Domain(format!("λ_{k} = {} is not a finite nonnegative number", lambdas[k])));
        }
        Ok(Self { lambdas, seed })
    }

    /// `λ_k = k^{-power}`, `k = 1..=n`.
    pub fn power_law(n: usize, power: f64, seed: u64) -> Result<Self> {
        Self::new((1..=n).map(|k| (k as f64).powf(-power)).collect(), seed)
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trace(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            lambdas: self.lambdas.clone(),
            seed,
        }
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.lambdas.iter().map(|l| l * c).collect(), self.seed)
    }

    fn stream(&self, path_index: u64, level: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path_index ^ ((level as u64) << 48));
        rng
    }
}

/// One sampled path: increments `ΔW_j` and the running sums `W(t_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    path_index: u64,
    level: u32,
    increments: Vec<f64>,
    cumulative: Trajectory,
}

impl NoisePath {
    fn from_increments(grid: TimeGrid, dim: usize, increments: Vec<f64>, path_index: u64, level: u32) -> Self {
        let mut values = vec![0.0; (grid.steps() + 1) * dim];
        for j in 0..grid.steps() {
            for k in 0..dim {
                values[(j + 1) * dim + k] = values[j * dim + k] + increments[j * dim + k];
            }
        }
        let cumulative = Trajectory::from_values(grid, dim, values).expect("consistent noise layout");
        Self {
            path_index,
            level,
            increments,
            cumulative,
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.cumulative.grid()
    }

    pub fn dim(&self) -> usize {
        self.cumulative.dim()
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// `ΔW_j = W(t_{j+1}) − W(t_j)`.
    pub fn increment(&self, j: usize) -> &[f64] {
        let n = self.dim();
        &self.increments[j * n..(j + 1) * n]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(t_j)`.
    pub fn cumulative(&self) -> &Trajectory {
        &self.cumulative
    }

    /// The same Brownian path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        let grid = self.grid().coarsened(factor)?;
        let n = self.dim();
        let mut inc = vec![0.0; grid.steps() * n];
        for j in 0..grid.steps() {
            for q in 0..factor {
                for k in 0..n {
                    inc[j * n + k] += self.increments[(j * factor + q) * n + k];
                }
            }
        }
        Ok(NoisePath::from_increments(grid, n, inc, self.path_index, self.level))
    }

    /// Halves the step by Brownian-bridge midpoint insertion; the existing nodes are kept.
    pub fn refine_bridge(&self, q: &QWiener) -> Result<NoisePath> {
        if q.dim() != self.dim() {
            return Err(Error::Shape("Q and the path have different dimensions".into()));
        }
        let level = self.level + 1;
        let mut rng = q.stream(self.path_index, level);
        let grid = TimeGrid::new(self.grid().h() / 2.0, self.grid().steps() * 2)?;
        let n = self.dim();
        let h = self.grid().h();
        let mut inc = Vec::with_capacity(grid.steps() * n);
        let mut second = vec![0.0; n];
        for j in 0..self.grid().steps() {
            for k in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                let half = 0.5 * self.increments[j * n + k];
                let dev = (0.25 * h * q.lambdas[k]).sqrt() * z;
                inc.push(half + dev);
                second[k] = self.increments[j * n + k] - (half + dev);
            }
            inc.extend_from_slice(&second);
        }
        Ok(NoisePath::from_increments(grid, n, inc, self.path_index, level))
    }
}

/// Samples path `path_index` of the ensemble on `grid`.
pub fn sample_noise(q: &QWiener, grid: TimeGrid, path_index: u64) -> NoisePath {
    let mut rng = q.stream(path_index, 0);
    let n = q.dim();
    let scales: Vec<f64> = q.lambdas.iter().map(|l| (grid.h() * l).sqrt()).collect();
    let mut inc = Vec::with_capacity(grid.steps() * n);
    for _ in 0..grid.steps() {
        for s in &scales {
            let z: f64 = StandardNormal.sample(&mut rng);
            inc.push(s * z);
        }
    }
    NoisePath::from_increments(grid, n, inc, path_index, 0)
}

/// As [`sample_noise`] for explicit grid points, which must be uniform and start at 0.
pub fn sample_noise_on(q: &QWiener, points: &[f64], path_index: u64) -> Result<NoisePath> {
    Ok(sample_noise(q, TimeGrid::from_points(points)?, path_index))
}

/// Paths `0..count`, generated in parallel and returned in index order.
pub fn sample_ensemble(q: &QWiener, grid: TimeGrid, count: usize) -> Vec<NoisePath> {
    (0..count as u64)
        .into_par_iter()
        .map(|p| sample_noise(q, grid, p))
        .collect()
}

/// Sample covariance of `(W(s), W(t))` against `(s∧t)·Q`.
#[derive(Clone, Debug, Serialize)]
pub struct CovarianceReport {
    pub dim: usize,
    /// Row-major `E[W_i(s) W_k(t)]` estimates.
    pub estimate: Vec<f64>,
    pub expected: Vec<f64>,
    pub std_error: Vec<f64>,
    pub max_standardized_deviation: f64,
    pub pass: bool,
}

pub const MIN_COVARIANCE_ENSEMBLE: usize = 1000;

pub fn covariance_check(q: &QWiener, ensemble: &[NoisePath], s: f64, t: f64) -> Result<CovarianceReport> {
    if ensemble.len() < MIN_COVARIANCE_ENSEMBLE {
        return Err(Error::Statistics(format!(
            "covariance check needs at least {MIN_COVARIANCE_ENSEMBLE} paths, got {}",
            ensemble.len()
        )));
    }
    let grid = ensemble[0].grid();
    let n = q.dim();
    if ensemble.iter().any(|p| !p.grid().matches(&grid) || p.dim() != n) {
        return Err(Error::Shape("ensemble paths differ in grid or dimension".into()));
    }
    let js = grid.index_of(s).ok_or_else(|| Error::Range(format!("s = {s} is not a grid node")))?;
    let jt = grid.index_of(t).ok_or_else(|| Error::Range(format!("t = {t} is not a grid node")))?;
    let count = ensemble.len() as f64;
    let mut sum = vec![0.0; n * n];
    let mut sum_sq = vec![0.0; n * n];
    for path in ensemble {
        let ws = path.cumulative().node(js);
        let wt = path.cumulative().node(jt);
        for i in 0..n {
            for k in 0..n {
                let x = ws[i] * wt[k];
                sum[i * n + k] += x;
                sum_sq[i * n + k] += x * x;
            }
        }
    }
    let st = s.min(t);
    let mut estimate = vec![0.0; n * n];
    let mut expected = vec![0.0; n * n];
    let mut std_error = vec![0.0; n * n];
    let mut worst: f64 = 0.0;
    for idx in 0..n * n {
        let mean = sum[idx] / count;
        let var = ((sum_sq[idx] - count * mean * mean) / (count - 1.0)).max(0.0);
        let se = (var / count).sqrt();
        let want = if idx / n == idx % n { st * q.lambdas[idx / n] } else { 0.0 };
        let diff = (mean - want).abs();
        let z = if diff == 0.0 {
            0.0
        } else if se == 0.0 {
            f64::INFINITY
        } else {
            diff / se
        };
        worst = worst.max(z);
        estimate[idx] = mean;
        expected[idx] = want;
        std_error[idx] = se;
    }
    Ok(CovarianceReport {
        dim: n,
        estimate,
        expected,
        std_error,
        max_standardized_deviation: worst,
        pass: worst < 4.0,
    })
}

/// Pooled lag-1 autocorrelation of the increments of one mode across an ensemble.
pub fn lag1_autocorrelation(ensemble: &[NoisePath], mode: usize) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for path in ensemble {
        if mode >= path.dim() {
            return Err(Error::Shape(format!("mode {mode} out of range")));
        }
        let steps = path.grid().steps();
        for j in 0..steps {
            let x = path.increment(j)[mode];
            den += x * x;
            if j + 1 < steps {
                num += x * path.increment(j + 1)[mode];
            }
        }
    }
    if den == 0.0 {
        return Err(Error::Statistics("all increments vanish".into()));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: f64, steps: usize) -> TimeGrid {
        TimeGrid::new(h, steps).unwrap()
    }

    #[test]
    fn zero_covariance_gives_zero_path() {
        let q = QWiener::new(vec![0.0, 0.0], 3).unwrap();
        let p = sample_noise(&q, grid(0.1, 10), 0);
        assert!(p.increments().iter().all(|&v| v == 0.0));
        assert!(p.cumulative().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn increment_variance_matches_h_lambda() {
        let q = QWiener::new(vec![1.0], 17).unwrap();
        let p = sample_noise(&q, grid(0.01, 100_000), 0);
        let var = p.increments().iter().map(|x| x * x).sum::<f64>() / 1e5;
        assert!((0.985 * 0.01..=1.015 * 0.01).contains(&var), "{var}");
    }

    #[test]
    fn paths_are_deterministic_and_distinct() {
        let q = QWiener::new(vec![1.0, 0.25], 42).unwrap();
        let a = sample_noise(&q, grid(0.1, 20), 5);
        let b = sample_noise(&q, grid(0.1, 20), 5);
        let c = sample_noise(&q, grid(0.1, 20), 6);
        assert_eq!(a, b);
        assert_ne!(a.increments(), c.increments());
        let other_seed = sample_noise(&q.with_seed(43), grid(0.1, 20), 5);
        assert_ne!(a.increments(), other_seed.increments());
        let ens = sample_ensemble(&q, grid(0.1, 20), 8);
        assert_eq!(ens[5], a);
    }

    #[test]
    fn cumulative_reproduces_increments() {
        let q = QWiener::new(vec![2.0, 0.5, 0.1], 9).unwrap();
        let p = sample_noise(&q, grid(0.05, 40), 1);
        assert_eq!(p.cumulative().node(0), &[0.0, 0.0, 0.0]);
        for j in 0..40 {
            for k in 0..3 {
                let d = p.cumulative().node(j + 1)[k] - p.cumulative().node(j)[k];
                assert!((d - p.increment(j)[k]).abs() <= 1e-15 * (1.0 + d.abs()));
            }
        }
    }

    #[test]
    fn nonuniform_points_rejected() {
        let q = QWiener::new(vec![1.0], 1).unwrap();
        assert!(matches!(sample_noise_on(&q, &[0.0, 0.1, 0.3], 0), Err(Error::Config(_))));
        assert!(sample_noise_on(&q, &[0.0, 0.1, 0.2], 0).is_ok());
    }

    #[test]
    fn bridge_refinement_keeps_coarse_nodes() {
        let q = QWiener::new(vec![1.0, 0.3], 11).unwrap();
        let p = sample_noise(&q, grid(0.125, 8), 2);
        let fine = p.refine_bridge(&q).unwrap();
        assert_eq!(fine.grid().steps(), 16);
        let back = fine.coarsen(2).unwrap();
        for j in 0..=8 {
            for k in 0..2 {
                assert!((back.cumulative().node(j)[k] - p.cumulative().node(j)[k]).abs() < 1e-14);
            }
        }
        let finer = fine.refine_bridge(&q).unwrap();
        assert_ne!(finer.increments()[..2], fine.increments()[..2]);
    }

    #[test]
    fn covariance_examples() {
        let q = QWiener::new(vec![1.0, 0.5], 5).unwrap();
        let g = grid(0.25, 4);
        let ens = sample_ensemble(&q, g, 10_000);
        let at_zero = covariance_check(&q, &ens, 0.0, 0.5).unwrap();
        assert!(at_zero.estimate.iter().all(|&v| v == 0.0));
        assert_eq!(at_zero.max_standardized_deviation, 0.0);
        let same = covariance_check(&q, &ens, 0.75, 0.75).unwrap();
        assert!(same.pass, "{same:?}");
        let mixed = covariance_check(&q, &ens, 0.25, 1.0).unwrap();
        assert!(mixed.pass, "{mixed:?}");
        assert!(matches!(covariance_check(&q, &ens[..10], 0.25, 1.0), Err(Error::Statistics(_))));
        assert!(matches!(covariance_check(&q, &ens, 0.3, 1.0), Err(Error::Range(_))));
    }

    #[test]
    fn increments_are_uncorrelated_in_time() {
        let q = QWiener::new(vec![1.0, 0.1], 8).unwrap();
        let ens = sample_ensemble(&q, grid(0.01, 100), 1000);
        let bound = 4.0 / (100.0f64 * 1000.0).sqrt();
        for mode in 0..2 {
            assert!(lag1_autocorrelation(&ens, mode).unwrap().abs() < bound);
        }
    }

    #[test]
    fn doubling_lambda_doubles_covariance() {
        let q = QWiener::new(vec![1.0], 21).unwrap();
        let q2 = q.scaled(2.0).unwrap();
        let g = grid(0.5, 2);
        let c1 = covariance_check(&q, &sample_ensemble(&q, g, 4000), 1.0, 1.0).unwrap();
        let c2 = covariance_check(&q2, &sample_ensemble(&q2, g, 4000), 1.0, 1.0).unwrap();
        let ratio = c2.estimate[0] / c1.estimate[0];
        let se = 2.0 * (c1.std_error[0] / c1.estimate[0]).hypot(c2.std_error[0] / c2.estimate[0]);
        assert!((ratio - 2.0).abs() < 4.0 * se, "{ratio} ± {se}");
        assert!(c1.pass && c2.pass);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn coarsening_preserves_endpoints(seed in any::<u64>(), idx in 0u64..1000, f in 1usize..5) {
                let q = QWiener::new(vec![1.0, 0.2], seed).unwrap();
                let p = sample_noise(&q, TimeGrid::new(0.01, 12 * f).unwrap(), idx);
                let c = p.coarsen(f).unwrap();
                for j in 0..=12 {
                    for k in 0..2 {
                        let a = c.cumulative().node(j)[k];
                        let b = p.cumulative().node(j * f)[k];
                        prop_assert!((a - b).abs() < 1e-13);
                    }
                }
            }
        }
    }
}
