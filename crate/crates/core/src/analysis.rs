//! Regularity diagnostics and moment inequalities for path ensembles.
//!
//! Hölder exponents come from the structure function
//! `S(δ) = E‖y(t+δ) − y(t)‖²` on dyadic lags: `log S` is regressed on `log δ`
//! and the exponent is half the slope. Ensemble estimates are produced in
//! fixed-size chunks and merged in chunk order, so results do not depend on the
//! number of worker threads.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::convolution::{driven_increments, recursive_from_driven, AlphaWindow, ConvolutionConfig};
use crate::delay::{DelayOperator, DelaySpec};
use crate::error::{Error, Result};
use crate::noise::{sample_noise, NoisePath, QWiener};
use crate::path::{TimeGrid, Trajectory};
use crate::spectral::{DenseOperator, SpectralModel};

pub const MIN_LAGS: usize = 4;
pub const DEFAULT_LAGS: usize = 6;
const CHUNK: usize = 64;

/// Hölder-exponent estimate from a structure-function regression.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityReport {
    pub estimate: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    /// Lags `δ` in time units.
    pub scales: Vec<f64>,
    /// Lags in grid steps.
    pub lags: Vec<usize>,
    /// Ensemble mean of the time-averaged `‖y(t+δ) − y(t)‖²` per lag.
    pub structure_values: Vec<f64>,
    /// Monte Carlo standard error of each structure value.
    pub structure_std_errors: Vec<f64>,
    /// Standard error of the exponent (half the slope's).
    pub std_error: f64,
    pub paths: usize,
    /// `max` over paths and nodes of `‖y(t_j)‖`.
    pub max_path_norm: f64,
}

impl RegularityReport {
    pub fn band_intersects(&self, lo: f64, hi: f64) -> bool {
        self.band_lo <= hi && self.band_hi >= lo
    }
}

/// Streaming accumulator of per-path structure functions.
#[derive(Clone, Debug)]
pub struct StructureAccumulator {
    grid: TimeGrid,
    lags: Vec<usize>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: usize,
    max_norm: f64,
}

impl StructureAccumulator {
    /// Dyadic lags `1, 2, 4, …, 2^{count-1}` steps.
    pub fn dyadic(grid: TimeGrid, count: usize) -> Result<Self> {
        Self::with_lags(grid, (0..count).map(|i| 1usize << i).collect())
    }

    pub fn with_lags(grid: TimeGrid, lags: Vec<usize>) -> Result<Self> {
        if lags.len() < MIN_LAGS {
            return Err(Error::Config(format!("at least {MIN_LAGS} lags are required, got {}", lags.len())));
        }
        if lags.windows(2).any(|w| w[1] <= w[0]) || lags[0] == 0 {
            return Err(Error::Config("lags must be positive and increasing".into()));
        }
        let largest = *lags.last().expect("nonempty");
        if largest >= grid.steps() {
            return Err(Error::Range(format!(
                "largest lag {largest} needs more than the {} available steps",
                grid.steps()
            )));
        }
        let k = lags.len();
        Ok(Self {
            grid,
            lags,
            sum: vec![0.0; k],
            sum_sq: vec![0.0; k],
            count: 0,
            max_norm: 0.0,
        })
    }

    pub fn push(&mut self, y: &Trajectory) -> Result<()> {
        if !y.grid().matches(&self.grid) {
            return Err(Error::Shape("trajectory grid differs from the accumulator grid".into()));
        }
        let steps = self.grid.steps();
        for (i, &lag) in self.lags.iter().enumerate() {
            let mut s = 0.0;
            for j in 0..=steps - lag {
                s += y
                    .node(j + lag)
                    .iter()
                    .zip(y.node(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            s /= (steps - lag + 1) as f64;
            self.sum[i] += s;
            self.sum_sq[i] += s * s;
        }
        self.max_norm = self.max_norm.max(y.sup_norm());
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &StructureAccumulator) {
        for i in 0..self.lags.len() {
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
        }
        self.count += other.count;
        self.max_norm = self.max_norm.max(other.max_norm);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<RegularityReport> {
        if self.count == 0 {
            return Err(Error::Statistics("no trajectories accumulated".into()));
        }
        let p = self.count as f64;
        let k = self.lags.len();
        let means: Vec<f64> = self.sum.iter().map(|s| s / p).collect();
        let ses: Vec<f64> = (0..k)
            .map(|i| {
                if self.count < 2 {
                    0.0
                } else {
                    let var = ((self.sum_sq[i] - p * means[i] * means[i]) / (p - 1.0)).max(0.0);
                    (var / p).sqrt()
                }
            })
            .collect();
        if means.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::DegenerateRegression(
                "structure function vanishes at some lag (constant trajectories?)".into(),
            ));
        }
        let scales: Vec<f64> = self.lags.iter().map(|&l| l as f64 * self.grid.h()).collect();
        let xs: Vec<f64> = scales.iter().map(|d| d.ln()).collect();
        let ys: Vec<f64> = means.iter().map(|m| m.ln()).collect();
        let kf = k as f64;
        let mx = xs.iter().sum::<f64>() / kf;
        let my = ys.iter().sum::<f64>() / kf;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
        let intercept = my - slope * mx;
        let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        let ols_var = ssr / (kf - 2.0) / sxx;
        let mc_var: f64 = (0..k)
            .map(|i| ((xs[i] - mx) / sxx).powi(2) * (ses[i] / means[i]).powi(2))
            .sum();
        let slope_se = (ols_var + mc_var).sqrt();
        if !slope.is_finite() {
            return Err(Error::DegenerateRegression("non-finite regression slope".into()));
        }
        let estimate = slope / 2.0;
        let std_error = slope_se / 2.0;
        Ok(RegularityReport {
            estimate,
            band_lo: estimate - 2.0 * std_error,
            band_hi: estimate + 2.0 * std_error,
            scales,
            lags: self.lags.clone(),
            structure_values: means,
            structure_std_errors: ses,
            std_error,
            paths: self.count,
            max_path_norm: self.max_norm,
        })
    }
}

/// Structure-function exponent of an in-memory ensemble.
pub fn holder_estimate(paths: &[Trajectory], lags: usize) -> Result<RegularityReport> {
    let first = paths
        .first()
        .ok_or_else(|| Error::Statistics("empty ensemble".into()))?;
    let mut acc = StructureAccumulator::dyadic(first.grid(), lags)?;
    for y in paths {
        acc.push(y)?;
    }
    acc.finish()
}

/// Streams `count` generated paths through an accumulator, in parallel chunks
/// reduced in index order.
pub fn ensemble_holder_estimate<F>(template: StructureAccumulator, count: usize, generate: F) -> Result<RegularityReport>
where
    F: Fn(u64) -> Result<Trajectory> + Sync,
{
    let chunks: Vec<Result<StructureAccumulator>> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = template.clone();
            for idx in c * CHUNK..((c + 1) * CHUNK).min(count) {
                acc.push(&generate(idx as u64)?)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = template;
    for c in chunks {
        total.merge(&c?);
    }
    total.finish()
}

/// `(−A)^γ y` applied node by node.
pub fn fractional_power_path(model: &SpectralModel, gamma: f64, y: &Trajectory) -> Result<Trajectory> {
    if y.dim() != model.dim() {
        return Err(Error::Shape("trajectory and model dimensions differ".into()));
    }
    let factors = model.fractional_factors(gamma)?;
    y.map_nodes(|v| v.iter().zip(&factors).map(|(x, f)| x * f).collect())
}

/// Hölder estimate of `(−A)^γ y` over an ensemble, with the largest path norm.
pub fn fractional_path_regularity(
    paths: &[Trajectory],
    model: &SpectralModel,
    gamma: f64,
    lags: usize,
) -> Result<RegularityReport> {
    let mapped = paths
        .iter()
        .map(|y| fractional_power_path(model, gamma, y))
        .collect::<Result<Vec<_>>>()?;
    holder_estimate(&mapped, lags)
}

/// Closed-form `sup_{t>0} t^{1-α}|a|e^{at}` for one mode with eigenvalue `a < 0`.
pub fn dalpha_mode_sup(a: f64, alpha: f64) -> f64 {
    if alpha >= 1.0 {
        a.abs()
    } else {
        (1.0 - alpha).powf(1.0 - alpha) * a.abs().powf(alpha) * (alpha - 1.0).exp()
    }
}

pub const DALPHA_GRID_POINTS: usize = 2000;
pub const DALPHA_T_MIN: f64 = 1e-8;

/// `sup_t ‖t^{1-α} A e^{tA} h‖` over log-spaced `t ∈ [1e-8, T]`.
pub fn dalpha_norm(model: &SpectralModel, alpha: f64, h: &DVector<f64>, horizon: f64) -> Result<f64> {
    if let Some(k) = model.eigenvalues().iter().position(|&a| a >= 0.0) {
        return Err(Error::Domain(format!(
            "D_A(α,∞) norm needs a negative spectrum; a_{k} = {}",
            model.eigenvalues()[k]
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("α = {alpha} must lie in (0, 1]")));
    }
    if h.len() != model.dim() {
        return Err(Error::Shape("vector length differs from the model dimension".into()));
    }
    if !(horizon > DALPHA_T_MIN) {
        return Err(Error::Domain(format!("horizon {horizon} must exceed {DALPHA_T_MIN}")));
    }
    let ratio = (horizon / DALPHA_T_MIN).ln() / (DALPHA_GRID_POINTS - 1) as f64;
    let mut best: f64 = 0.0;
    for i in 0..DALPHA_GRID_POINTS {
        let t = DALPHA_T_MIN * (ratio * i as f64).exp();
        let w = t.powf(1.0 - alpha);
        let v: f64 = model
            .eigenvalues()
            .iter()
            .zip(h.iter())
            .map(|(a, x)| (w * a * (a * t).exp() * x).powi(2))
            .sum::<f64>()
            .sqrt();
        best = best.max(v);
    }
    Ok(best)
}

/// One row of the Yosida moment table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YosidaMomentRow {
    pub n: f64,
    /// Monte Carlo mean of `max_j ‖W_G^B(t_j) − W_{G_n}^B(t_j)‖^p`.
    pub mean: f64,
    pub std_error: f64,
}

/// `E sup_t ‖W_G^B − W_{G_n}^B‖^p` for each `n`, with `G` and `G_n` driven by the same noise.
#[allow(clippy::too_many_arguments)]
pub fn yosida_moment_convergence(
    model: &SpectralModel,
    op: &DelayOperator,
    b: &DenseOperator,
    q: &QWiener,
    p: f64,
    horizon: f64,
    n_list: &[f64],
    paths: usize,
) -> Result<Vec<YosidaMomentRow>> {
    if !(p > 2.0) {
        return Err(Error::Config(format!("moment order p = {p} must exceed 2")));
    }
    if paths < 2 {
        return Err(Error::Statistics("need at least two paths".into()));
    }
    let grid = TimeGrid::covering(op.grid().step(), horizon)?;
    let approx = n_list
        .iter()
        .map(|&n| model.yosida_generator(n))
        .collect::<Result<Vec<_>>>()?;
    let per_path: Vec<Result<Vec<f64>>> = (0..paths as u64)
        .into_par_iter()
        .map(|idx| {
            let noise = sample_noise(q, grid, idx);
            let bw = driven_increments(b, &noise);
            let exact = recursive_from_driven(model, op, grid, &bw)?;
            approx
                .iter()
                .map(|m| Ok(recursive_from_driven(m, op, grid, &bw)?.sup_distance(&exact)?.powf(p)))
                .collect()
        })
        .collect();
    let mut sums = vec![0.0; n_list.len()];
    let mut sums_sq = vec![0.0; n_list.len()];
    for row in per_path {
        for (i, v) in row?.into_iter().enumerate() {
            sums[i] += v;
            sums_sq[i] += v * v;
        }
    }
    let pf = paths as f64;
    Ok(n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mean = sums[i] / pf;
            let var = ((sums_sq[i] - pf * mean * mean) / (pf - 1.0)).max(0.0);
            YosidaMomentRow {
                n,
                mean,
                std_error: (var / pf).sqrt(),
            }
        })
        .collect())
}

/// Strictly decreasing, except for at most `allowed` inversions each within two
/// combined standard errors.
pub fn decreasing_up_to_noise(values: &[f64], std_errors: &[f64], allowed: usize) -> bool {
    let mut inversions = 0;
    for i in 1..values.len() {
        if values[i] < values[i - 1] {
            continue;
        }
        let tol = 2.0 * std_errors[i].hypot(std_errors[i - 1]);
        if values[i] - values[i - 1] > tol {
            return false;
        }
        inversions += 1;
    }
    inversions <= allowed
}

/// Piecewise-constant adapted diffusion coefficient `B(t) = m(t)·B`.
#[derive(Clone, Debug, PartialEq)]
pub enum BProcess {
    Constant(DenseOperator),
    /// `m(t) = scales[i]` on `[breaks[i], breaks[i+1])`.
    Schedule {
        breaks: Vec<f64>,
        scales: Vec<f64>,
        b: DenseOperator,
    },
    /// On each `[iτ, (i+1)τ)`, `m = high` if the first noise mode is positive at `iτ`, else `low`.
    Adapted {
        interval: f64,
        low: f64,
        high: f64,
        b: DenseOperator,
    },
}

impl BProcess {
    pub fn base(&self) -> &DenseOperator {
        match self {
            BProcess::Constant(b) => b,
            BProcess::Schedule { b, .. } | BProcess::Adapted { b, .. } => b,
        }
    }

    /// The same process with `B` replaced by `c·B`.
    pub fn scaled(&self, c: f64) -> BProcess {
        match self {
            BProcess::Constant(b) => BProcess::Constant(b.scaled(c)),
            BProcess::Schedule { breaks, scales, b } => BProcess::Schedule {
                breaks: breaks.clone(),
                scales: scales.clone(),
                b: b.scaled(c),
            },
            BProcess::Adapted { interval, low, high, b } => BProcess::Adapted {
                interval: *interval,
                low: *low,
                high: *high,
                b: b.scaled(c),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            BProcess::Constant(_) => Ok(()),
            BProcess::Schedule { breaks, scales, .. } => {
                if breaks.is_empty() || breaks.len() != scales.len() {
                    return Err(Error::Config("B schedule needs matching, nonempty breaks and scales".into()));
                }
                if breaks[0] != 0.0 || breaks.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("B schedule breaks must start at 0 and increase".into()));
                }
                if scales.iter().any(|s| !s.is_finite()) {
                    return Err(Error::Config("B schedule scales must be finite".into()));
                }
                Ok(())
            }
            BProcess::Adapted { interval, low, high, .. } => {
                if !(*interval > 0.0) || !low.is_finite() || !high.is_finite() {
                    return Err(Error::Config("adapted B needs a positive interval and finite levels".into()));
                }
                Ok(())
            }
        }
    }

    /// `m(t_k)` for each step of the noise grid.
    pub fn multipliers(&self, noise: &NoisePath) -> Result<Vec<f64>> {
        let grid = noise.grid();
        let steps = grid.steps();
        match self {
            BProcess::Constant(_) => Ok(vec![1.0; steps]),
            BProcess::Schedule { breaks, scales, .. } => Ok((0..steps)
                .map(|k| {
                    let t = grid.t(k) * (1.0 + 1e-12);
                    let i = breaks.partition_point(|&b| b <= t).max(1) - 1;
                    scales[i]
                })
                .collect()),
            BProcess::Adapted { interval, low, high, .. } => {
                let per = grid.index_of(*interval).filter(|&j| j > 0).ok_or_else(|| {
                    Error::Config(format!("adapted interval {interval} is not a multiple of the step {}", grid.h()))
                })?;
                Ok((0..steps)
                    .map(|k| {
                        let start = (k / per) * per;
                        if noise.cumulative().node(start)[0] > 0.0 {
                            *high
                        } else {
                            *low
                        }
                    })
                    .collect())
            }
        }
    }
}

/// Both sides of the maximal inequality on one grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BdgGrid {
    pub m: usize,
    pub h: f64,
    /// Monte Carlo `E max_j ‖W(t_j)‖^p` (a lower bound for the continuous sup).
    pub lhs: f64,
    pub lhs_std_error: f64,
    /// `E Σ_k h·Tr[B_k Q B_k*]^{p/2}`.
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BdgReport {
    pub p: f64,
    pub alpha: Option<f64>,
    pub grids: Vec<BdgGrid>,
    /// Ratio on the finest grid.
    pub ratio: f64,
    /// Relative change of the ratio between the two finest grids.
    pub relative_change: f64,
    pub pass: bool,
}

fn ratio_of(lhs: f64, rhs: f64) -> f64 {
    if rhs == 0.0 {
        if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        lhs / rhs
    }
}

/// Monte Carlo ratio `E sup‖∫G(t−s)B(s)dW(s)‖^p / E∫Tr[B Q B*]^{p/2}` per θ-resolution
/// in `m_list`; all grids are driven by one fine-grid noise path per sample.
#[allow(clippy::too_many_arguments)]
pub fn bdg_ratio(
    model: &SpectralModel,
    delay: &DelaySpec,
    bproc: &BProcess,
    q: &QWiener,
    p: f64,
    horizon: f64,
    paths: usize,
    m_list: &[usize],
    alpha: Option<f64>,
) -> Result<BdgReport> {
    if !(p > 2.0) {
        return Err(Error::Config(format!("moment order p = {p} must exceed 2")));
    }
    if let Some(a) = alpha {
        ConvolutionConfig::new(a, p, AlphaWindow::Bdg)?;
    }
    bproc.validate()?;
    if m_list.is_empty() || m_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("grid list must be nonempty and increasing".into()));
    }
    if paths < 2 {
        return Err(Error::Statistics("need at least two paths".into()));
    }
    let n = model.dim();
    let b = bproc.base();
    if b.rows() != n || b.cols() != q.dim() {
        return Err(Error::Shape("B does not map the noise space into the state space".into()));
    }
    let m_fine = *m_list.last().expect("nonempty");
    if m_list.iter().any(|m| !m_fine.is_multiple_of(*m)) {
        return Err(Error::Config("every grid must divide the finest one".into()));
    }
    let ops = m_list.iter().map(|&m| delay.build(n, m)).collect::<Result<Vec<_>>>()?;
    let fine = TimeGrid::covering(delay.r / m_fine as f64, horizon)?;
    for &m in m_list {
        if fine.steps() % (m_fine / m) != 0 {
            return Err(Error::Config(format!("horizon is not a multiple of r/{m}")));
        }
    }
    let tr_bqb: f64 = b
        .matrix()
        .column_iter()
        .zip(q.lambdas())
        .map(|(c, l)| l * c.norm_squared())
        .sum();

    let per_path: Vec<Result<Vec<(f64, f64)>>> = (0..paths as u64)
        .into_par_iter()
        .map(|idx| {
            let fine_noise = sample_noise(q, fine, idx);
            m_list
                .iter()
                .zip(&ops)
                .map(|(&m, op)| {
                    let noise = fine_noise.coarsen(m_fine / m)?;
                    let mult = bproc.multipliers(&noise)?;
                    let mut bw = driven_increments(b, &noise);
                    for (k, chunk) in bw.chunks_mut(n).enumerate() {
                        chunk.iter_mut().for_each(|v| *v *= mult[k]);
                    }
                    let y = recursive_from_driven(model, op, noise.grid(), &bw)?;
                    let h = noise.grid().h();
                    let rhs: f64 = mult.iter().map(|c| h * (c * c * tr_bqb).powf(p / 2.0)).sum();
                    Ok((y.sup_norm().powf(p), rhs))
                })
                .collect()
        })
        .collect();

    let k = m_list.len();
    let mut lhs_sum = vec![0.0; k];
    let mut lhs_sq = vec![0.0; k];
    let mut rhs_sum = vec![0.0; k];
    for row in per_path {
        for (i, (l, r)) in row?.into_iter().enumerate() {
            lhs_sum[i] += l;
            lhs_sq[i] += l * l;
            rhs_sum[i] += r;
        }
    }
    let pf = paths as f64;
    let grids: Vec<BdgGrid> = (0..k)
        .map(|i| {
            let lhs = lhs_sum[i] / pf;
            let var = ((lhs_sq[i] - pf * lhs * lhs) / (pf - 1.0)).max(0.0);
            let rhs = rhs_sum[i] / pf;
            BdgGrid {
                m: m_list[i],
                h: delay.r / m_list[i] as f64,
                lhs,
                lhs_std_error: (var / pf).sqrt(),
                rhs,
                ratio: ratio_of(lhs, rhs),
            }
        })
        .collect();
    let ratio = grids[k - 1].ratio;
    let relative_change = if k < 2 {
        0.0
    } else {
        let prev = grids[k - 2].ratio;
        if prev == ratio {
            0.0
        } else {
            (ratio - prev).abs() / prev.abs().max(ratio.abs())
        }
    };
    Ok(BdgReport {
        p,
        alpha,
        pass: ratio.is_finite() && relative_change < 0.25,
        grids,
        ratio,
        relative_change,
    })
}
