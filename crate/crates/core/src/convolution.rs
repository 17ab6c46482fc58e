//! Stochastic convolutions `W_G^B(t) = ∫_0^t G(t-s) B dW(s)` and mild solutions.
//!
//! Three discretizations of the same left-point Itô sum are available:
//! [`convolve_direct`] (the literal double sum), [`convolve_recursive`]
//! (an exponential-Euler recursion that reproduces the double sum in linear
//! time), and [`convolve_factorized`] (the factorization split `I_1 + I_2`).

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView, DVectorViewMut};
use serde::Serialize;

use crate::delay::{trapezoid_weights, DelayOperator, Segment};
use crate::error::{Error, Result};
use crate::green::GreenTable;
use crate::noise::{NoisePath, QWiener};
use crate::path::{TimeGrid, Trajectory};
use crate::quadrature::{left_singular_cell, product_weights_power};
use crate::spectral::{DenseOperator, SpectralModel};

/// Which admissibility window applies to the factorization exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaWindow {
    /// `α ∈ (0, 1/2)`.
    Factorization,
    /// `α ∈ (1/p, 1/2)`, used for moment and Hölder estimates.
    Moment,
    /// `α ∈ (0, (p-2)/(2p))`, used for the maximal inequality.
    Bdg,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvolutionConfig {
    alpha: f64,
    p: f64,
    window: AlphaWindow,
}

impl ConvolutionConfig {
    pub fn new(alpha: f64, p: f64, window: AlphaWindow) -> Result<Self> {
        let (lo, hi) = match window {
            AlphaWindow::Factorization => (0.0, 0.5),
            AlphaWindow::Moment | AlphaWindow::Bdg if !(p > 2.0) => {
                return Err(Error::Config(format!("moment order p = {p} must exceed 2")))
            }
            AlphaWindow::Moment => (1.0 / p, 0.5),
            AlphaWindow::Bdg => (0.0, (p - 2.0) / (2.0 * p)),
        };
        if !(alpha > lo && alpha < hi) {
            return Err(Error::Config(format!(
                "α = {alpha} is infeasible for p = {p}: the moment/Hölder route needs α ∈ (1/p, 1/2) = ({:.6}, 0.5) \
                 and the maximal-inequality route needs α ∈ (0, (p-2)/(2p)) = (0, {:.6}); the {:?} window was requested",
                1.0 / p,
                (p - 2.0) / (2.0 * p),
                window
            )));
        }
        Ok(Self { alpha, p, window })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn window(&self) -> AlphaWindow {
        self.window
    }
}

fn check_noise(dim: usize, b: &DenseOperator, noise: &NoisePath) -> Result<()> {
    if b.rows() != dim || b.cols() != noise.dim() {
        return Err(Error::Shape(format!(
            "B is {}x{}, expected {}x{}",
            b.rows(),
            b.cols(),
            dim,
            noise.dim()
        )));
    }
    Ok(())
}

/// `B ΔW_k` for every step, node-major.
pub(crate) fn driven_increments(b: &DenseOperator, noise: &NoisePath) -> Vec<f64> {
    let n = b.rows();
    let steps = noise.grid().steps();
    let inc = DMatrixView::from_slice(noise.increments(), noise.dim(), steps);
    let out = b.matrix() * inc;
    debug_assert_eq!(out.len(), n * steps);
    out.data.as_vec().clone()
}

/// `W(t_j) = Σ_{k<j} G(t_j − t_k) B ΔW_k`.
pub fn convolve_direct(g: &GreenTable, b: &DenseOperator, noise: &NoisePath) -> Result<Trajectory> {
    if !g.grid().matches(&noise.grid()) {
        return Err(Error::Shape("Green table and noise are on different grids".into()));
    }
    check_noise(g.dim(), b, noise)?;
    let n = g.dim();
    let steps = g.grid().steps();
    let bw = driven_increments(b, noise);
    let mut out = Trajectory::zeros(g.grid(), n);
    for j in 1..=steps {
        let mut acc = DVectorViewMut::from_slice(out.node_mut(j), n);
        for k in 0..j {
            let gm = DMatrixView::from_slice(g.block(j - k), n, n);
            acc.gemv(1.0, &gm, &DVectorView::from_slice(&bw[k * n..(k + 1) * n], n), 1.0);
        }
    }
    Ok(out)
}

/// The same sum as [`convolve_direct`] for the method-of-steps table of
/// `(model, op)`, computed by `X_{j+1} = e^{hA}[X̃_j + h F X̃_{(j)}]` with `X̃_m = X_m + BΔW_m`.
pub fn convolve_recursive(
    model: &SpectralModel,
    op: &DelayOperator,
    b: &DenseOperator,
    noise: &NoisePath,
) -> Result<Trajectory> {
    let n = model.dim();
    if op.dim() != n {
        return Err(Error::Shape("model and delay operator dimensions differ".into()));
    }
    check_noise(n, b, noise)?;
    recursive_from_driven(model, op, noise.grid(), &driven_increments(b, noise))
}

/// Recursion of [`convolve_recursive`] for arbitrary driving terms `b_k` (node-major),
/// e.g. `B(t_k)ΔW_k` with a time-dependent diffusion coefficient.
pub fn recursive_from_driven(
    model: &SpectralModel,
    op: &DelayOperator,
    grid: TimeGrid,
    bw: &[f64],
) -> Result<Trajectory> {
    let n = model.dim();
    let h = grid.h();
    if (op.grid().step() - h).abs() > 1e-12 * h {
        return Err(Error::Shape(format!(
            "noise step {h} differs from the θ-grid step {}",
            op.grid().step()
        )));
    }
    let steps = grid.steps();
    if bw.len() != steps * n {
        return Err(Error::Shape("driving terms do not match the grid".into()));
    }
    let decay = model.semigroup_factors(h)?;
    let m = op.grid().steps() as isize;
    let delay_free = op.is_zero();
    // shifted[j] = X_j + b_j
    let mut shifted = vec![0.0; steps * n];
    let mut out = Trajectory::zeros(grid, n);
    let mut forcing = vec![0.0; n];
    for j in 0..steps {
        for k in 0..n {
            shifted[j * n + k] = out.node(j)[k] + bw[j * n + k];
        }
        if !delay_free {
            forcing.iter_mut().for_each(|v| *v = 0.0);
            let node = |l: usize| {
                let idx = j as isize + l as isize - m;
                (idx >= 0).then(|| &shifted[idx as usize * n..(idx as usize + 1) * n])
            };
            op.apply_blocks(1, &node, &mut forcing);
        }
        let next = out.node_mut(j + 1);
        for k in 0..n {
            next[k] = decay[k] * (shifted[j * n + k] + h * forcing[k]);
        }
    }
    Ok(out)
}

/// Output of [`convolve_factorized`].
#[derive(Clone, Debug)]
pub struct FactorizedConvolution {
    /// `sin(πα)/π · (I_1 + I_2)`.
    pub trajectory: Trajectory,
    /// The history part `I_1` (unscaled).
    pub i1: Trajectory,
    /// The semigroup-like part `I_2` (unscaled).
    pub i2: Trajectory,
    /// `max ‖K(τ,σ) − (G(τ+σ) − G(τ)G(σ))‖_F` over the grid: the discrete
    /// quasi-semigroup defect carried by the split.
    pub quasi_semigroup_defect: f64,
}

/// Factorized stochastic convolution:
/// `I_2(t) = ∫_0^t (t-s)^{α-1} G(t-s) Z(s) ds` with `Z(s) = Σ_{t_k<s} G(s-t_k)(s-t_k)^{-α} BΔW_k`, and
/// `I_1(t) = ∫_0^t (t-s)^{α-1} Y(t,s) ds` with `Y(t,s) = Σ_{t_k<s} (s-t_k)^{-α} K(t-s, s-t_k) BΔW_k`,
/// where `K(τ,σ) = ∫_{-r}^0 G(τ+θ)[S G(σ+·)](θ) dθ`. Outer integrals use exact
/// cell integrals of `(t-s)^{α-1}` against left-point values.
pub fn convolve_factorized(
    g: &GreenTable,
    op: &DelayOperator,
    b: &DenseOperator,
    noise: &NoisePath,
    cfg: &ConvolutionConfig,
) -> Result<FactorizedConvolution> {
    if !g.grid().matches(&noise.grid()) {
        return Err(Error::Shape("Green table and noise are on different grids".into()));
    }
    if op.dim() != g.dim() || (op.grid().step() - g.h()).abs() > 1e-12 * g.h() {
        return Err(Error::Shape("delay operator does not match the Green table".into()));
    }
    check_noise(g.dim(), b, noise)?;
    let alpha = cfg.alpha();
    let n = g.dim();
    let nn = n * n;
    let steps = g.grid().steps();
    let h = g.h();
    let bw = driven_increments(b, noise);
    let c: Vec<f64> = (0..=steps).map(|d| if d == 0 { 0.0 } else { (d as f64 * h).powf(-alpha) }).collect();
    let grid = g.grid();

    // Z(s_j)
    let mut z = vec![0.0; (steps + 1) * n];
    for j in 1..=steps {
        let mut acc = DVectorViewMut::from_slice(&mut z[j * n..(j + 1) * n], n);
        for k in 0..j {
            let gm = DMatrixView::from_slice(g.block(j - k), n, n);
            acc.gemv(c[j - k], &gm, &DVectorView::from_slice(&bw[k * n..(k + 1) * n], n), 1.0);
        }
    }

    // K(a, b) for a ≥ 1, b ≥ 1, a + b ≤ steps
    let kernel = (!op.is_zero()).then(|| history_kernel(g, op));
    let mut defect: f64 = 0.0;
    if let Some(k) = &kernel {
        for a in 1..=steps {
            let ga = DMatrixView::from_slice(g.block(a), n, n);
            for bb in 1..=steps - a {
                let gb = DMatrixView::from_slice(g.block(bb), n, n);
                let want = DMatrixView::from_slice(g.block(a + bb), n, n) - ga * gb;
                let kab = DMatrixView::from_slice(&k[(a, bb)], n, n);
                defect = defect.max((kab - want).norm());
            }
        }
    }

    let mut i1 = Trajectory::zeros(grid, n);
    let mut i2 = Trajectory::zeros(grid, n);
    let mut y = vec![0.0; n];
    for i in 1..=steps {
        let ti = grid.t(i);
        let mut acc2 = DVector::zeros(n);
        let mut acc1 = DVector::zeros(n);
        for j in 1..i {
            let w = left_singular_cell(alpha, ti, grid.t(j), grid.t(j + 1));
            let gm = DMatrixView::from_slice(g.block(i - j), n, n);
            acc2.gemv(w, &gm, &DVectorView::from_slice(&z[j * n..(j + 1) * n], n), 1.0);
            if let Some(k) = &kernel {
                y.iter_mut().for_each(|v| *v = 0.0);
                let mut yv = DVectorViewMut::from_slice(&mut y, n);
                for kk in 0..j {
                    let km = DMatrixView::from_slice(&k[(i - j, j - kk)], n, n);
                    yv.gemv(c[j - kk], &km, &DVectorView::from_slice(&bw[kk * n..(kk + 1) * n], n), 1.0);
                }
                acc1.axpy(w, &DVector::from_column_slice(&y), 1.0);
            }
        }
        i1.node_mut(i).copy_from_slice(acc1.as_slice());
        i2.node_mut(i).copy_from_slice(acc2.as_slice());
    }
    let scale = (std::f64::consts::PI * alpha).sin() / std::f64::consts::PI;
    let mut traj = Trajectory::zeros(grid, n);
    for (o, (a, b)) in traj.values_mut().iter_mut().zip(i1.values().iter().zip(i2.values())) {
        *o = scale * (a + b);
    }
    debug_assert!(nn > 0);
    Ok(FactorizedConvolution {
        trajectory: traj,
        i1,
        i2,
        quasi_semigroup_defect: defect,
    })
}

/// Triangular table of `K(a h, b h)` blocks.
struct HistoryKernel {
    steps: usize,
    nn: usize,
    data: Vec<f64>,
}

impl std::ops::Index<(usize, usize)> for HistoryKernel {
    type Output = [f64];
    fn index(&self, (a, b): (usize, usize)) -> &[f64] {
        let idx = a * (self.steps + 1) + b;
        &self.data[idx * self.nn..(idx + 1) * self.nn]
    }
}

fn history_kernel(g: &GreenTable, op: &DelayOperator) -> HistoryKernel {
    let n = g.dim();
    let nn = n * n;
    let steps = g.grid().steps();
    let mm = op.grid().steps();
    let h = op.grid().step();
    let mut data = vec![0.0; (steps + 1) * (steps + 1) * nn];
    for bb in 1..=steps {
        // θ ↦ [S G(σ+·)](θ) at σ = b h
        let sg = op.structure_matrix_segment(&|l| g.block_signed(bb as isize + l as isize - mm as isize));
        for a in 1..=steps - bb {
            let first = mm.saturating_sub(a);
            let w = trapezoid_weights(mm + 1 - first, h);
            let mut acc = DMatrix::<f64>::zeros(n, n);
            for l in first..=mm {
                let wl = w[l - first];
                if wl == 0.0 {
                    continue;
                }
                let gm = DMatrixView::from_slice(g.block(a + l - mm), n, n);
                acc.gemm(wl, &gm, &sg[l], 1.0);
            }
            let idx = a * (steps + 1) + bb;
            data[idx * nn..(idx + 1) * nn].copy_from_slice(acc.as_slice());
        }
    }
    HistoryKernel { steps, nn, data }
}

/// `y(t) = G(t)ψ_0 + ∫_{-r}^0 G(t+θ)(Sψ_1)(θ) dθ + W_G^B(t)`, the θ-integral by
/// trapezoid over the nodes with `t + θ ≥ 0`.
pub fn mild_solution(
    g: &GreenTable,
    op: &DelayOperator,
    psi0: &DVector<f64>,
    psi1: &Segment,
    b: &DenseOperator,
    noise: &NoisePath,
) -> Result<Trajectory> {
    let n = g.dim();
    if psi0.len() != n || psi1.dim() != n {
        return Err(Error::Shape("initial data has the wrong dimension".into()));
    }
    if op.dim() != n || (op.grid().step() - g.h()).abs() > 1e-12 * g.h() {
        return Err(Error::Shape("delay operator does not match the Green table".into()));
    }
    let s_psi = op.structure_apply(psi1)?;
    let mut y = convolve_direct(g, b, noise)?;
    let mm = op.grid().steps();
    let h = g.h();
    for j in 0..=g.grid().steps() {
        let mut v = DMatrixView::from_slice(g.block(j), n, n) * psi0;
        let first = mm.saturating_sub(j);
        let w = trapezoid_weights(mm + 1 - first, h);
        for l in first..=mm {
            if w[l - first] != 0.0 {
                let gm = DMatrixView::from_slice(g.block(j + l - mm), n, n);
                v.gemv(w[l - first], &gm, &DVectorView::from_slice(s_psi.node(l), n), 1.0);
            }
        }
        for (o, a) in y.node_mut(j).iter_mut().zip(v.iter()) {
            *o += a;
        }
    }
    Ok(y)
}

/// `Tr Q_T` and `∫_0^T t^{-2α} Tr[G(t)BQB*G(t)*] dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceCondition {
    pub trace_qt: f64,
    pub weighted_integral: f64,
    pub finite: bool,
}

/// `Tr[G(t_j) B Q B* G(t_j)*]` at every node up to index `upto`.
pub fn trace_integrand(g: &GreenTable, b: &DenseOperator, q: &QWiener, upto: usize) -> Result<Vec<f64>> {
    let n = g.dim();
    if b.rows() != n || b.cols() != q.dim() {
        return Err(Error::Shape("B does not map the noise space into the state space".into()));
    }
    let mut bq = b.matrix().clone();
    for (k, l) in q.lambdas().iter().enumerate() {
        bq.column_mut(k).scale_mut(l.sqrt());
    }
    Ok((0..=upto)
        .map(|j| (DMatrixView::from_slice(g.block(j), n, n) * &bq).norm_squared())
        .collect())
}

/// Both integrals by product integration of `t^{-2α}` against the piecewise-linear
/// interpolant of the trace integrand.
pub fn trace_condition(g: &GreenTable, b: &DenseOperator, q: &QWiener, alpha: f64, horizon: f64) -> Result<TraceCondition> {
    if !(alpha >= 0.0) || alpha >= 0.5 {
        return Err(Error::Config(format!(
            "trace condition needs α ∈ (0, 1/2); α = {alpha} may make the weighted integral diverge"
        )));
    }
    let upto = g
        .grid()
        .index_of(horizon)
        .ok_or_else(|| Error::Range(format!("T = {horizon} is not a node of the Green table")))?;
    let f = trace_integrand(g, b, q, upto)?;
    let h = g.h();
    let plain = product_weights_power(0.0, h, upto)?;
    let weighted = product_weights_power(2.0 * alpha, h, upto)?;
    let trace_qt: f64 = plain.iter().zip(&f).map(|(w, v)| w * v).sum();
    let weighted_integral: f64 = weighted.iter().zip(&f).map(|(w, v)| w * v).sum();
    Ok(TraceCondition {
        trace_qt,
        weighted_integral,
        finite: trace_qt.is_finite() && weighted_integral.is_finite(),
    })
}

/// `Σ_{k<j} h·Tr[G(t_j-t_k)BQB*G(t_j-t_k)*]`: the exact second moment of the
/// discrete left-point convolution at `t_j`.
pub fn discrete_second_moment(g: &GreenTable, b: &DenseOperator, q: &QWiener, j: usize) -> Result<f64> {
    let f = trace_integrand(g, b, q, j)?;
    Ok(g.h() * f[1..=j].iter().sum::<f64>())
}
