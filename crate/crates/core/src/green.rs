//! Retarded fundamental solutions.
//!
//! `G(t)` solves `G(t) = e^{tA} + ∫_0^t e^{(t-s)A} F G(s+·) ds` with `G(0) = I` and
//! `G(t) = O` for `t < 0`. Two constructions are provided: exponential-Euler
//! marching (method of steps) and the partial sums of the Volterra series
//! `Σ_m V^m e^{·A}`. Both use the same quadrature, so they differ only by the
//! truncated tail of the series.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::delay::DelayOperator;
use crate::error::{Error, Result};
use crate::path::{fmt_f64, TimeGrid};
use crate::spectral::{operator_norm, SpectralModel};

/// `G(t_j)` on a uniform grid, `N×N` column-major blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenTable {
    grid: TimeGrid,
    dim: usize,
    mats: Vec<f64>,
}

impl GreenTable {
    pub fn from_blocks(grid: TimeGrid, dim: usize, mats: Vec<f64>) -> Result<Self> {
        if dim == 0 || mats.len() != (grid.steps() + 1) * dim * dim {
            return Err(Error::Shape(format!(
                "Green table needs {} entries, got {}",
                (grid.steps() + 1) * dim * dim,
                mats.len()
            )));
        }
        Ok(Self { grid, dim, mats })
    }

    /// Constant identity table (`A = 0`, `F = 0`).
    pub fn identity(grid: TimeGrid, dim: usize) -> Self {
        let eye = DMatrix::<f64>::identity(dim, dim);
        let mut mats = Vec::with_capacity((grid.steps() + 1) * dim * dim);
        for _ in 0..=grid.steps() {
            mats.extend_from_slice(eye.as_slice());
        }
        Self { grid, dim, mats }
    }

    /// `e^{t_j A}` sampled exactly.
    pub fn semigroup(model: &SpectralModel, grid: TimeGrid) -> Self {
        let n = model.dim();
        let mut mats = vec![0.0; (grid.steps() + 1) * n * n];
        for j in 0..=grid.steps() {
            let t = grid.t(j);
            for (k, a) in model.eigenvalues().iter().enumerate() {
                mats[j * n * n + k * n + k] = (a * t).exp();
            }
        }
        Self { grid, dim: n, mats }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn block(&self, j: usize) -> &[f64] {
        let nn = self.dim * self.dim;
        &self.mats[j * nn..(j + 1) * nn]
    }

    /// Block at a signed index; `None` (the zero matrix) for negative indices.
    pub fn block_signed(&self, j: isize) -> Option<&[f64]> {
        if j < 0 {
            None
        } else {
            Some(self.block(j as usize))
        }
    }

    pub fn matrix(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.dim, self.block(j))
    }

    /// `G(t)`: zero for `t < 0`, linear interpolation between nodes, range error past `T`.
    pub fn at(&self, t: f64) -> Result<DMatrix<f64>> {
        let n = self.dim;
        if t < 0.0 {
            return Ok(DMatrix::zeros(n, n));
        }
        if let Some(j) = self.grid.index_of(t) {
            return Ok(self.matrix(j));
        }
        let pos = t / self.h();
        let j = pos.floor() as usize;
        if j >= self.grid.steps() {
            return Err(Error::Range(format!(
                "G queried at t = {t} beyond the table horizon {}",
                self.horizon()
            )));
        }
        let w = pos - j as f64;
        Ok(self.matrix(j) * (1.0 - w) + self.matrix(j + 1) * w)
    }

    pub fn apply(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!("vector of length {} for a {}-dim table", x.len(), self.dim)));
        }
        Ok(self.at(t)? * x)
    }

    /// `‖G(t_j)‖` for every node.
    pub fn norms(&self) -> Vec<f64> {
        (0..=self.grid.steps()).map(|j| operator_norm(&self.matrix(j))).collect()
    }

    /// `max_j ‖G(t_j) − other(t_j)‖_max` (largest entry difference).
    pub fn max_entry_difference(&self, other: &GreenTable) -> Result<f64> {
        if !self.grid.matches(&other.grid) || self.dim != other.dim {
            return Err(Error::Shape("Green tables live on different grids".into()));
        }
        Ok(self
            .mats
            .iter()
            .zip(&other.mats)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// CSV with header `t,i,j,value`, one row per matrix entry, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,i,j,value")?;
        let n = self.dim;
        for step in 0..=self.grid.steps() {
            let t = fmt_f64(self.grid.t(step));
            let b = self.block(step);
            for i in 0..n {
                for j in 0..n {
                    writeln!(w, "{t},{i},{j},{}", fmt_f64(b[j * n + i]))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "t,i,j,value" {
            return Err(Error::Parse(format!("unexpected Green CSV header {header:?}")));
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("malformed Green CSV row {}: {line:?}", lineno + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let t: f64 = f[0].parse().map_err(|_| bad())?;
            let i: usize = f[1].parse().map_err(|_| bad())?;
            let j: usize = f[2].parse().map_err(|_| bad())?;
            let v: f64 = f[3].parse().map_err(|_| bad())?;
            rows.push((t, i, j, v));
        }
        let n = rows.iter().map(|r| r.1.max(r.2)).max().map(|m| m + 1).unwrap_or(0);
        if n == 0 || rows.len() % (n * n) != 0 {
            return Err(Error::Parse("Green CSV does not hold whole N×N blocks".into()));
        }
        let times: Vec<f64> = rows.iter().step_by(n * n).map(|r| r.0).collect();
        let grid = if times.len() == 1 {
            TimeGrid::new(1.0, 0)?
        } else {
            TimeGrid::from_points(&times)?
        };
        let mut mats = vec![0.0; rows.len()];
        for (idx, (_, i, j, v)) in rows.iter().enumerate() {
            let block = idx / (n * n);
            mats[block * n * n + j * n + i] = *v;
        }
        Self::from_blocks(grid, n, mats)
    }
}

fn check_compatible(model: &SpectralModel, op: &DelayOperator) -> Result<()> {
    if model.dim() != op.dim() {
        return Err(Error::Shape(format!(
            "model has {} modes, delay operator acts on {}",
            model.dim(),
            op.dim()
        )));
    }
    Ok(())
}

fn time_grid(op: &DelayOperator, horizon: f64) -> Result<TimeGrid> {
    if op.grid().steps() < 2 {
        return Err(Error::Config("the θ-grid needs M ≥ 2 steps".into()));
    }
    TimeGrid::covering(op.grid().step(), horizon)
}

/// `next = e^{hA}(cur + h·forcing)` for column-major `N×cols` blocks.
fn exp_euler(decay: &[f64], h: f64, cur: &[f64], forcing: &[f64], next: &mut Vec<f64>) {
    let n = decay.len();
    for (c, (x, f)) in cur.iter().zip(forcing).enumerate() {
        next.push(decay[c % n] * (x + h * f));
    }
}

/// Method-of-steps table on the θ-grid step of `op`, up to `horizon`.
pub fn green_method_of_steps(model: &SpectralModel, op: &DelayOperator, horizon: f64) -> Result<GreenTable> {
    check_compatible(model, op)?;
    let grid = time_grid(op, horizon)?;
    if op.is_zero() {
        return Ok(GreenTable::semigroup(model, grid));
    }
    let n = model.dim();
    let nn = n * n;
    let h = grid.h();
    let m = op.grid().steps() as isize;
    let decay = model.semigroup_factors(h)?;
    let mut mats = Vec::with_capacity((grid.steps() + 1) * nn);
    mats.extend_from_slice(DMatrix::<f64>::identity(n, n).as_slice());
    let mut forcing = vec![0.0; nn];
    for j in 0..grid.steps() {
        forcing.iter_mut().for_each(|v| *v = 0.0);
        {
            let table = &mats;
            let node = |l: usize| {
                let idx = j as isize + l as isize - m;
                (idx >= 0).then(|| &table[idx as usize * nn..(idx as usize + 1) * nn])
            };
            op.apply_blocks(n, &node, &mut forcing);
        }
        let cur = mats[j * nn..(j + 1) * nn].to_vec();
        exp_euler(&decay, h, &cur, &forcing, &mut mats);
    }
    GreenTable::from_blocks(grid, n, mats)
}

/// Partial sum of the Volterra series together with its error control.
#[derive(Clone, Debug)]
pub struct VolterraSeries {
    pub table: GreenTable,
    /// `κ = M·T·M_2^{1/2}`.
    pub kappa: f64,
    /// `M = sup_{t≤T} ‖e^{tA}‖`.
    pub semigroup_bound: f64,
    /// `M·Σ_{m > m_max} κ^m/m!`.
    pub tail_bound: f64,
    /// `max_j ‖G(m, t_j)‖` for `m = 0..=m_max`.
    pub term_sup_norms: Vec<f64>,
}

impl VolterraSeries {
    /// `κ^m/m!·M`, the factorial bound on the `m`-th term.
    pub fn term_bound(&self, m: usize) -> f64 {
        let mut b = self.semigroup_bound;
        for i in 1..=m {
            b *= self.kappa / i as f64;
        }
        b
    }
}

/// `M·Σ_{m > m_max} κ^m/m!`.
pub fn volterra_tail_bound(kappa: f64, semigroup_bound: f64, m_max: usize) -> f64 {
    let mut term = 1.0;
    let mut tail = 0.0;
    let mut m = 0usize;
    loop {
        if m > m_max {
            tail += term;
            if term <= tail * 1e-17 && m as f64 > kappa || term == 0.0 {
                break;
            }
        }
        m += 1;
        term *= kappa / m as f64;
        if !term.is_finite() {
            return f64::INFINITY;
        }
    }
    semigroup_bound * tail
}

pub fn green_volterra_series(
    model: &SpectralModel,
    op: &DelayOperator,
    horizon: f64,
    m_max: usize,
) -> Result<VolterraSeries> {
    check_compatible(model, op)?;
    let grid = time_grid(op, horizon)?;
    let n = model.dim();
    let nn = n * n;
    let h = grid.h();
    let m = op.grid().steps() as isize;
    let decay = model.semigroup_factors(h)?;

    let mut term = GreenTable::semigroup(model, grid);
    let mut sum = term.mats.clone();
    let mut term_sup_norms = vec![term.norms().into_iter().fold(0.0, f64::max)];
    let mut forcing = vec![0.0; nn];
    for _ in 0..m_max {
        let prev = &term;
        let mut next = Vec::with_capacity(prev.mats.len());
        next.resize(nn, 0.0);
        for j in 0..grid.steps() {
            forcing.iter_mut().for_each(|v| *v = 0.0);
            let node = |l: usize| prev.block_signed(j as isize + l as isize - m);
            op.apply_blocks(n, &node, &mut forcing);
            let cur = next[j * nn..(j + 1) * nn].to_vec();
            exp_euler(&decay, h, &cur, &forcing, &mut next);
        }
        let next = GreenTable::from_blocks(grid, n, next)?;
        for (s, v) in sum.iter_mut().zip(&next.mats) {
            *s += v;
        }
        term_sup_norms.push(next.norms().into_iter().fold(0.0, f64::max));
        term = next;
    }

    let semigroup_bound = model.semigroup_sup_norm(horizon);
    let kappa = semigroup_bound * horizon * op.extension_constant(2.0)?.sqrt();
    Ok(VolterraSeries {
        table: GreenTable::from_blocks(grid, n, sum)?,
        kappa,
        semigroup_bound,
        tail_bound: volterra_tail_bound(kappa, semigroup_bound, m_max),
        term_sup_norms,
    })
}

/// Norm of `G(t+s)x − G(t)G(s)x − ∫_{-r}^0 G(t+θ)[S G(s+·)x](θ) dθ`.
///
/// The θ-integral is a trapezoid over the nodes with `t + θ ≥ 0`, where `G(t+θ)` is nonzero.
pub fn quasi_semigroup_residual(
    g: &GreenTable,
    op: &DelayOperator,
    s: f64,
    t: f64,
    x: &DVector<f64>,
) -> Result<f64> {
    if !(s >= 0.0 && t >= 0.0) {
        return Err(Error::Domain(format!("quasi-semigroup identity needs s, t ≥ 0 (got {s}, {t})")));
    }
    if s + t > g.horizon() * (1.0 + 1e-12) {
        return Err(Error::Range(format!(
            "s + t = {} exceeds the table horizon {}",
            s + t,
            g.horizon()
        )));
    }
    if g.dim() != op.dim() || x.len() != g.dim() {
        return Err(Error::Shape("table, operator and probe dimensions differ".into()));
    }
    if (op.grid().step() - g.h()).abs() > 1e-12 * g.h() {
        return Err(Error::Shape("θ-grid step differs from the table step".into()));
    }
    let theta = op.grid();
    let mm = theta.steps();
    let n = g.dim();
    let lhs = g.apply(s + t, x)?;
    let direct = g.at(t)? * g.apply(s, x)?;

    let seg: Vec<f64> = (0..=mm)
        .flat_map(|l| g.apply(s + theta.node(l), x).map(|v| v.data.as_vec().clone()).unwrap_or_else(|_| vec![0.0; n]))
        .collect();
    let first = (0..=mm).find(|&l| t + theta.node(l) >= -1e-9 * theta.step()).unwrap_or(mm);
    let w = crate::delay::trapezoid_weights(mm + 1 - first, theta.step());
    let mut integral = DVector::zeros(n);
    let mut sval = vec![0.0; n];
    for l in first..=mm {
        let wl = w[l - first];
        if wl == 0.0 {
            continue;
        }
        sval.iter_mut().for_each(|v| *v = 0.0);
        op.structure_blocks(1, &|q| Some(&seg[q * n..(q + 1) * n]), l, &mut sval);
        let gt = g.at((t + theta.node(l)).max(0.0))?;
        integral += gt * DVector::from_column_slice(&sval) * wl;
    }
    Ok((lhs - direct - integral).norm())
}

/// Envelope `‖G(t)‖ ≤ c·e^{γt}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthFit {
    pub c: f64,
    pub gamma: f64,
}

/// Least-squares fit of `log ‖G(t_j)‖` against `t_j`, with `c` raised until the
/// envelope dominates every node.
pub fn growth_fit(g: &GreenTable) -> Result<GrowthFit> {
    growth_fit_norms(g.grid(), &g.norms())
}

pub(crate) fn growth_fit_norms(grid: TimeGrid, norms: &[f64]) -> Result<GrowthFit> {
    let pts: Vec<(f64, f64)> = norms
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= 1e-14 && v.is_finite())
        .map(|(j, &v)| (grid.t(j), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit("fewer than two nodes with ‖G‖ ≥ 1e-14".into()));
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("all usable nodes share one time".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let gamma = sxy / sxx;
    let intercept = my - gamma * mt;
    let lift = pts
        .iter()
        .map(|p| p.1 - intercept - gamma * p.0)
        .fold(0.0, f64::max);
    Ok(GrowthFit {
        c: (intercept + lift).exp(),
        gamma,
    })
}

/// Green table of the Yosida-approximated generator with its sup-defect per probe.
#[derive(Clone, Debug)]
pub struct YosidaGreen {
    pub n: f64,
    pub table: GreenTable,
    /// `max_j ‖G_n(t_j)x − G(t_j)x‖` for each probe `x`.
    pub defects: Vec<f64>,
}

pub fn yosida_green(
    model: &SpectralModel,
    op: &DelayOperator,
    n: f64,
    horizon: f64,
    reference: &GreenTable,
    probes: &[DVector<f64>],
) -> Result<YosidaGreen> {
    let approx = model.yosida_generator(n)?;
    let table = green_method_of_steps(&approx, op, horizon)?;
    if !table.grid().matches(&reference.grid()) {
        return Err(Error::Shape("reference table is on a different grid".into()));
    }
    let defects = probes
        .iter()
        .map(|x| {
            if x.len() != model.dim() {
                return Err(Error::Shape("probe vector has the wrong length".into()));
            }
            Ok((0..=table.grid().steps())
                .map(|j| ((table.matrix(j) - reference.matrix(j)) * x).norm())
                .fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    Ok(YosidaGreen { n, table, defects })
}

/// Smallest `n` in `n_list` after which the fitted growth rate of `G_n` stays
/// within 5% of its value at `n`; also returns every fitted rate.
pub fn yosida_growth_stabilization(
    model: &SpectralModel,
    op: &DelayOperator,
    horizon: f64,
    n_list: &[f64],
) -> Result<(Option<f64>, Vec<GrowthFit>)> {
    let fits = n_list
        .iter()
        .map(|&n| growth_fit(&green_method_of_steps(&model.yosida_generator(n)?, op, horizon)?))
        .collect::<Result<Vec<_>>>()?;
    let stable = (0..fits.len()).find(|&i| {
        let g = fits[i].gamma;
        fits[i..]
            .iter()
            .all(|f| (f.gamma - g).abs() <= 0.05 * g.abs().max(1e-9))
    });
    Ok((stable.map(|i| n_list[i]), fits))
}
