//! Deterministic solvers: inhomogeneous evolution, classical solutions of the
//! delayed equation, and the integrated-convolution identity.
//!
//! Forcing is integrated exactly against `e^{(t-s)a_k}` for its piecewise-linear
//! interpolant, using `φ₁(z) = (e^z − 1)/z` and `φ₂(z) = (e^z − 1 − z)/z²`.
//! The delayed equation is stepped with an exponential trapezoid predictor-corrector,
//! reading history from the initial segment before `t = r`.

use std::sync::Arc;

use nalgebra::{DMatrixView, DVector, DVectorView};
use serde::Serialize;

use crate::analysis::dalpha_norm;
use crate::convolution::convolve_direct;
use crate::delay::{euclid, DelayOperator, DelaySpec, Segment};
use crate::error::{Error, Result};
use crate::green::{green_method_of_steps, GreenTable};
use crate::noise::{sample_noise, NoisePath, QWiener};
use crate::path::{TimeGrid, Trajectory};
use crate::spectral::{DenseOperator, SpectralModel};

type ForcingFn = dyn Fn(f64) -> DVector<f64> + Send + Sync;

/// `t ↦ f(t)` on `[0, T]` with a declared Hölder exponent.
#[derive(Clone)]
pub struct ForcingFunction {
    dim: usize,
    holder_exponent: f64,
    f: Arc<ForcingFn>,
}

impl std::fmt::Debug for ForcingFunction {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("ForcingFunction")
            .field("dim", &self.dim)
            .field("holder_exponent", &self.holder_exponent)
            .finish_non_exhaustive()
    }
}

impl ForcingFunction {
    pub fn new(dim: usize, holder_exponent: f64, f: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            holder_exponent,
            f: Arc::new(f),
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, 1.0, move |_| DVector::zeros(dim))
    }

    pub fn constant(c: DVector<f64>) -> Self {
        Self::new(c.len(), 1.0, move |_| c.clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn holder_exponent(&self) -> f64 {
        self.holder_exponent
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        (self.f)(t)
    }

    /// Values at the grid nodes; errors on a wrong length or non-finite value.
    pub fn sample(&self, grid: TimeGrid) -> Result<Trajectory> {
        let y = Trajectory::from_fn(grid, self.dim, |t| self.eval(t))?;
        if let Some(j) = (0..=grid.steps()).find(|&j| y.node(j).iter().any(|v| !v.is_finite())) {
            return Err(Error::Domain(format!("forcing is not finite at t = {}", grid.t(j))));
        }
        Ok(y)
    }
}

/// `(φ₁(z), φ₂(z))`.
pub fn phi_functions(z: f64) -> (f64, f64) {
    if z.abs() < 0.05 {
        // φ_k(z) = Σ_i z^i / (i + k)!
        let series = |k: u32| {
            let mut acc = 0.0;
            for i in (0..10u32).rev() {
                let fact: f64 = (1..=i + k).map(f64::from).product();
                acc = acc * z + 1.0 / fact;
            }
            acc
        };
        let (phi1, phi2) = (series(1), series(2));
        (phi1, phi2)
    } else {
        let e = z.exp_m1();
        (e / z, (e - z) / (z * z))
    }
}

struct Stepper {
    decay: Vec<f64>,
    w1: Vec<f64>,
    w2: Vec<f64>,
    h: f64,
}

impl Stepper {
    fn new(model: &SpectralModel, h: f64) -> Self {
        let (w1, w2) = model.eigenvalues().iter().map(|a| phi_functions(a * h)).unzip();
        Self {
            decay: model.eigenvalues().iter().map(|a| (a * h).exp()).collect(),
            w1,
            w2,
            h,
        }
    }

    /// `e^{hA}y + ∫_0^h e^{(h-s)A} g(s) ds` for `g` linear from `g0` to `g1`.
    fn step(&self, y: &[f64], g0: &[f64], g1: &[f64], out: &mut [f64]) {
        for k in 0..y.len() {
            out[k] = self.decay[k] * y[k] + self.h * (self.w1[k] * g0[k] + self.w2[k] * (g1[k] - g0[k]));
        }
    }
}

/// `y(t) = e^{tA}φ₀ + ∫_0^t e^{(t-s)A} f(s) ds` on `grid`.
pub fn solve_inhomogeneous(
    model: &SpectralModel,
    f: &ForcingFunction,
    phi0: &DVector<f64>,
    grid: TimeGrid,
) -> Result<Trajectory> {
    let n = model.dim();
    if phi0.len() != n || f.dim() != n {
        return Err(Error::Shape("initial value, forcing and model dimensions differ".into()));
    }
    if phi0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial value is not finite".into()));
    }
    let fs = f.sample(grid)?;
    let stepper = Stepper::new(model, grid.h());
    let mut y = Trajectory::zeros(grid, n);
    y.node_mut(0).copy_from_slice(phi0.as_slice());
    let mut next = vec![0.0; n];
    for j in 0..grid.steps() {
        stepper.step(y.node(j), fs.node(j), fs.node(j + 1), &mut next);
        y.node_mut(j + 1).copy_from_slice(&next);
    }
    Ok(y)
}

/// Output of [`solve_delay_classical`].
#[derive(Clone, Debug)]
pub struct ClassicalSolution {
    pub trajectory: Trajectory,
    /// `‖y′ − Ay − Fy_t − f‖` at interior nodes (index `j − 1` for node `j`),
    /// with `y′` by central differences.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// `‖B₀‖·‖a‖_{L¹([−h, 0])}`: the contraction factor of one solver step.
    pub contraction: f64,
    /// `D_A(α,∞)` norm of `Aφ₀ + Fφ₁ + f(0)` with `α` the forcing's declared
    /// exponent; `None` when the spectrum is not strictly negative.
    pub compatibility_norm: Option<f64>,
}

/// `y′ = Ay + Fy_t + f`, `y(0) = φ₀`, `y = φ₁` on `[−r, 0)`, on the θ-grid step up to `T`.
pub fn solve_delay_classical(
    model: &SpectralModel,
    op: &DelayOperator,
    f: &ForcingFunction,
    phi0: &DVector<f64>,
    phi1: &Segment,
    horizon: f64,
) -> Result<ClassicalSolution> {
    let n = model.dim();
    if op.dim() != n || phi0.len() != n || f.dim() != n || phi1.dim() != n {
        return Err(Error::Shape("model, delay operator, forcing and data dimensions differ".into()));
    }
    if phi1.grid() != op.grid() {
        return Err(Error::Shape("history segment is not on the delay operator's θ-grid".into()));
    }
    let h = op.grid().step();
    let grid = TimeGrid::covering(h, horizon)?;
    let steps = grid.steps();
    let m = op.grid().steps();
    let fs = f.sample(grid)?;
    let stepper = Stepper::new(model, h);

    // buf node i ↔ time (i − M)·h
    let mut buf = vec![0.0; (m + steps + 1) * n];
    for l in 0..m {
        buf[l * n..(l + 1) * n].copy_from_slice(phi1.node(l));
    }
    buf[m * n..(m + 1) * n].copy_from_slice(phi0.as_slice());
    let delay = |buf: &[f64], j: usize, out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        if !op.is_zero() {
            op.apply_blocks(1, &|l| Some(&buf[(j + l) * n..(j + l + 1) * n]), out);
        }
    };
    let mut g0 = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    let mut next = vec![0.0; n];
    for j in 0..steps {
        delay(&buf, j, &mut g0);
        g0.iter_mut().zip(fs.node(j)).for_each(|(g, fv)| *g += fv);
        let (past, rest) = buf.split_at_mut((m + j + 1) * n);
        let y = &past[(m + j) * n..];
        // predictor: frozen forcing
        for k in 0..n {
            rest[k] = stepper.decay[k] * y[k] + h * stepper.w1[k] * g0[k];
        }
        delay(&buf, j + 1, &mut g1);
        g1.iter_mut().zip(fs.node(j + 1)).for_each(|(g, fv)| *g += fv);
        stepper.step(&buf[(m + j) * n..(m + j + 1) * n], &g0, &g1, &mut next);
        buf[(m + j + 1) * n..(m + j + 2) * n].copy_from_slice(&next);
    }
    let trajectory = Trajectory::from_values(grid, n, buf[m * n..].to_vec())?;

    let mut residuals = Vec::with_capacity(steps.saturating_sub(1));
    let mut fy = vec![0.0; n];
    for j in 1..steps {
        delay(&buf, j, &mut fy);
        let yj = trajectory.node(j);
        let r: Vec<f64> = (0..n)
            .map(|k| {
                let dy = (trajectory.node(j + 1)[k] - trajectory.node(j - 1)[k]) / (2.0 * h);
                dy - model.eigenvalues()[k] * yj[k] - fy[k] - fs.node(j)[k]
            })
            .collect();
        residuals.push(euclid(&r));
    }
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);

    let compat = {
        let fphi = op.apply(phi1)?;
        let aphi = model.generator_apply(phi0)?;
        aphi + fphi + f.eval(0.0)
    };
    let compatibility_norm = if model.eigenvalues().iter().all(|&a| a < 0.0) {
        let alpha = f.holder_exponent().clamp(f64::MIN_POSITIVE, 1.0);
        Some(dalpha_norm(model, alpha, &compat, horizon)?)
    } else {
        None
    };
    Ok(ClassicalSolution {
        trajectory,
        residuals,
        max_residual,
        contraction: op.kernel_l1_tail(h),
        compatibility_norm,
    })
}

/// `sup_j ‖y_j‖ + max_{i<j} ‖y_j − y_i‖ / (t_j − t_i)^α` on the grid.
pub fn holder_norm(y: &Trajectory, alpha: f64) -> f64 {
    let grid = y.grid();
    let mut semi: f64 = 0.0;
    for j in 1..=grid.steps() {
        for i in 0..j {
            let d: f64 = y.node(j).iter().zip(y.node(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            semi = semi.max(d / ((j - i) as f64 * grid.h()).powf(alpha));
        }
    }
    y.sup_norm() + semi
}

/// Defects of the identity `dZ/dt = AZ + FZ_t + BW = W_G^B` for
/// `Z(t) = ∫_0^t G(t−s)BW(s) ds`, per node (zero at the two endpoints).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityDefects {
    pub h: f64,
    pub identity: Vec<f64>,
    pub convolution: Vec<f64>,
}

impl IdentityDefects {
    /// Largest defects over interior nodes whose index is a multiple of `stride`.
    pub fn max_at_stride(&self, stride: usize) -> (f64, f64) {
        let last = self.identity.len() - 1;
        let pick = |v: &[f64]| {
            (stride..last)
                .step_by(stride.max(1))
                .map(|j| v[j])
                .fold(0.0, f64::max)
        };
        (pick(&self.identity), pick(&self.convolution))
    }

    pub fn max(&self) -> (f64, f64) {
        self.max_at_stride(1)
    }
}

/// Both defects, with `Z` by the trapezoid rule in `s`, `dZ/dt` by central
/// differences and `W_G^B` the left-point sum.
pub fn integrated_identity_residual(
    model: &SpectralModel,
    g: &GreenTable,
    op: &DelayOperator,
    b: &DenseOperator,
    noise: &NoisePath,
) -> Result<IdentityDefects> {
    let n = g.dim();
    let grid = noise.grid();
    if !g.grid().matches(&grid) && !(g.h() == grid.h() && g.grid().steps() >= grid.steps()) {
        return Err(Error::Shape("Green table and noise grids differ".into()));
    }
    if model.dim() != n || op.dim() != n {
        return Err(Error::Shape("model, operator and Green table dimensions differ".into()));
    }
    if (op.grid().step() - grid.h()).abs() > 1e-12 * grid.h() {
        return Err(Error::Shape("θ-grid step differs from the noise step".into()));
    }
    let steps = grid.steps();
    let h = grid.h();
    let w = noise.cumulative();
    let bw: Vec<DVector<f64>> = (0..=steps)
        .map(|j| b.apply(&DVector::from_column_slice(w.node(j))))
        .collect::<Result<_>>()?;
    let mut z = Trajectory::zeros(grid, n);
    for j in 1..=steps {
        let mut acc = DVector::zeros(n);
        for (k, bwk) in bw.iter().enumerate().take(j + 1) {
            let weight = if k == 0 || k == j { 0.5 * h } else { h };
            let gm = DMatrixView::from_slice(g.block(j - k), n, n);
            acc.gemv(weight, &gm, bwk, 1.0);
        }
        z.node_mut(j).copy_from_slice(acc.as_slice());
    }
    let conv = convolve_direct(g, b, noise)?;
    let m = op.grid().steps() as isize;
    let mut identity = vec![0.0; steps + 1];
    let mut convolution = vec![0.0; steps + 1];
    let mut fz = vec![0.0; n];
    let zero = vec![0.0; n];
    for j in 1..steps {
        fz.iter_mut().for_each(|v| *v = 0.0);
        op.apply_blocks(
            1,
            &|l| {
                let idx = j as isize + l as isize - m;
                Some(if idx >= 0 { z.node(idx as usize) } else { &zero[..] })
            },
            &mut fz,
        );
        let dz: DVector<f64> = (DVectorView::from_slice(z.node(j + 1), n) - DVectorView::from_slice(z.node(j - 1), n)) / (2.0 * h);
        let az = model.generator_apply(&z.node_vector(j))?;
        let rhs = az + DVector::from_column_slice(&fz) + &bw[j];
        identity[j] = (&dz - rhs).norm();
        convolution[j] = (dz - conv.node_vector(j)).norm();
    }
    Ok(IdentityDefects {
        h,
        identity,
        convolution,
    })
}

/// Defects at the nodes of the coarsest grid under `levels` Brownian-bridge
/// refinements of one noise path; the operator is rebuilt at each θ-resolution.
#[allow(clippy::too_many_arguments)]
pub fn integrated_identity_refinement(
    model: &SpectralModel,
    delay: &DelaySpec,
    m0: usize,
    b: &DenseOperator,
    q: &QWiener,
    horizon: f64,
    path_index: u64,
    levels: usize,
) -> Result<Vec<(f64, f64, f64)>> {
    let n = model.dim();
    let mut noise = sample_noise(q, TimeGrid::covering(delay.r / m0 as f64, horizon)?, path_index);
    let mut out = Vec::with_capacity(levels + 1);
    for level in 0..=levels {
        if level > 0 {
            noise = noise.refine_bridge(q)?;
        }
        let op = delay.build(n, m0 << level)?;
        let g = green_method_of_steps(model, &op, horizon)?;
        let d = integrated_identity_residual(model, &g, &op, b, &noise)?;
        let (i, c) = d.max_at_stride(1 << level);
        out.push((d.h, i, c));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{Kernel, ThetaGrid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(a: f64) -> SpectralModel {
        SpectralModel::new(vec![a], "scalar").unwrap()
    }

    #[test]
    fn phi_functions_are_continuous_across_the_switch() {
        for &z in &[0.0499, -0.0499] {
            let (a1, a2) = phi_functions(z);
            let e = z.exp_m1();
            assert_relative_eq!(a1, e / z, max_relative = 1e-12);
            assert_relative_eq!(a2, (e - z) / (z * z), max_relative = 1e-9);
        }
        assert_eq!(phi_functions(0.0), (1.0, 0.5));
        let (p1, p2) = phi_functions(-1.0);
        assert_relative_eq!(p1, 1.0 - (-1.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(p2, (-1.0f64).exp(), max_relative = 1e-13);
    }

    #[test]
    fn inhomogeneous_examples() {
        let grid = TimeGrid::new(0.01, 100).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let lap = SpectralModel::dirichlet_laplacian(2);
        let y = solve_inhomogeneous(&lap, &ForcingFunction::zero(2), &x, grid).unwrap();
        let exact = lap.semigroup_apply(1.0, &x).unwrap();
        assert!((y.node_vector(100) - exact).norm() < 1e-12);

        let c = DVector::from_vec(vec![0.7]);
        let y = solve_inhomogeneous(&scalar(0.0), &ForcingFunction::constant(c), &DVector::from_vec(vec![2.0]), grid).unwrap();
        assert_relative_eq!(y.node(100)[0], 2.7, epsilon = 1e-13);

        let f = ForcingFunction::new(1, 1.0, |t| DVector::from_vec(vec![(-t).exp()]));
        let mut prev = f64::INFINITY;
        for steps in [25usize, 50, 100] {
            let y = solve_inhomogeneous(&scalar(-1.0), &f, &DVector::from_vec(vec![1.0]), TimeGrid::new(1.0 / steps as f64, steps).unwrap()).unwrap();
            let err = (y.last()[0] - 2.0 * (-1.0f64).exp()).abs();
            assert!(err < prev / 3.5, "{err} vs {prev}");
            prev = err;
        }
        assert!(prev < 1e-5);
    }

    fn scalar_delay(m: usize) -> DelayOperator {
        let grid = ThetaGrid::new(1.0, m).unwrap();
        DelayOperator::general(grid, vec![(1.0, DenseOperator::identity(1))], Kernel::None).unwrap()
    }

    #[test]
    fn scalar_delay_two_interval_formula() {
        let op = scalar_delay(100);
        let one = DVector::from_vec(vec![1.0]);
        let sol = solve_delay_classical(&scalar(0.0), &op, &ForcingFunction::zero(1), &one, &Segment::constant(op.grid(), &one), 2.0).unwrap();
        let y = &sol.trajectory;
        for j in 0..=200 {
            let t = j as f64 * 0.01;
            let want = if t <= 1.0 { 1.0 + t } else { 1.0 + t + (t - 1.0).powi(2) / 2.0 };
            assert!((y.node(j)[0] - want).abs() < 1e-12, "t = {t}");
        }
        assert!(sol.max_residual < 0.01);
        assert_eq!(sol.contraction, 0.0);
        assert!(sol.compatibility_norm.is_none());
    }

    #[test]
    fn no_delay_reduces_to_inhomogeneous() {
        let lap = SpectralModel::dirichlet_laplacian(3);
        let op = DelayOperator::zero(3, ThetaGrid::new(0.5, 50).unwrap());
        let f = ForcingFunction::new(3, 1.0, |t| DVector::from_vec(vec![t.sin(), 1.0, t * t]));
        let x = DVector::from_vec(vec![1.0, 0.5, -1.0]);
        let sol = solve_delay_classical(&lap, &op, &f, &x, &Segment::zeros(op.grid(), 3), 1.0).unwrap();
        let direct = solve_inhomogeneous(&lap, &f, &x, sol.trajectory.grid()).unwrap();
        assert!(sol.trajectory.sup_distance(&direct).unwrap() < 1e-12);
        assert!(sol.compatibility_norm.unwrap().is_finite());
    }

    #[test]
    fn linear_forcing_gives_exact_quadratic() {
        let op = DelayOperator::zero(1, ThetaGrid::new(0.1, 10).unwrap());
        let f = ForcingFunction::new(1, 1.0, |t| DVector::from_vec(vec![1.0 + 2.0 * t]));
        let sol = solve_delay_classical(&scalar(0.0), &op, &f, &DVector::from_vec(vec![0.5]), &Segment::zeros(op.grid(), 1), 1.0).unwrap();
        assert!((sol.trajectory.last()[0] - 2.5).abs() < 1e-12);
        assert!(sol.max_residual < 1e-10);
    }

    #[test]
    fn classical_solver_reproduces_green_columns() {
        let lap = SpectralModel::dirichlet_laplacian(2);
        let grid = ThetaGrid::new(0.25, 25).unwrap();
        let op = DelayOperator::standard(grid, DenseOperator::identity(2).scaled(0.5), |t| 1.0 + t, DenseOperator::identity(2)).unwrap();
        let g = green_method_of_steps(&lap, &op, 1.0).unwrap();
        let x = DVector::from_vec(vec![1.0, -1.0]);
        let sol = solve_delay_classical(&lap, &op, &ForcingFunction::zero(2), &x, &Segment::zeros(grid, 2), 1.0).unwrap();
        let mut worst: f64 = 0.0;
        for j in 0..=100 {
            worst = worst.max((g.apply(j as f64 * 0.01, &x).unwrap() - sol.trajectory.node_vector(j)).norm());
        }
        assert!(worst < 5.0 * grid.step(), "{worst}");
    }

    #[test]
    fn off_grid_horizon_and_shapes_error() {
        let op = scalar_delay(10);
        let one = DVector::from_vec(vec![1.0]);
        let seg = Segment::constant(op.grid(), &one);
        assert!(matches!(
            solve_delay_classical(&scalar(0.0), &op, &ForcingFunction::zero(1), &one, &seg, 1.05),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            solve_delay_classical(&scalar(0.0), &op, &ForcingFunction::zero(2), &one, &seg, 1.0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_diffusion_has_zero_defects() {
        let model = scalar(-1.0);
        let op = scalar_delay(8);
        let g = green_method_of_steps(&model, &op, 2.0).unwrap();
        let q = QWiener::new(vec![1.0], 1).unwrap();
        let noise = sample_noise(&q, g.grid(), 0);
        let d = integrated_identity_residual(&model, &g, &op, &DenseOperator::zeros(1, 1), &noise).unwrap();
        assert_eq!(d.max(), (0.0, 0.0));
    }

    #[test]
    fn scalar_identity_defects_shrink_under_bridge_refinement() {
        let model = scalar(-1.0);
        let spec = DelaySpec {
            r: 0.5,
            b1: crate::delay::MatrixSpec::Zero,
            b0: crate::delay::MatrixSpec::Zero,
            kernel: crate::delay::KernelSpec::Zero,
        };
        let q = QWiener::new(vec![1.0], 11).unwrap();
        let rows = integrated_identity_refinement(&model, &spec, 16, &DenseOperator::identity(1), &q, 1.0, 0, 2).unwrap();
        assert!(rows[2].1 < rows[0].1 && rows[2].2 < rows[0].2, "{rows:?}");
    }

    proptest! {
        #[test]
        fn constant_forcing_on_zero_generator_is_exact(c in -5.0f64..5.0, y0 in -5.0f64..5.0, steps in 1usize..60) {
            let grid = TimeGrid::new(1.0 / steps as f64, steps).unwrap();
            let y = solve_inhomogeneous(&scalar(0.0), &ForcingFunction::constant(DVector::from_vec(vec![c])), &DVector::from_vec(vec![y0]), grid).unwrap();
            for j in 0..=steps {
                prop_assert!((y.node(j)[0] - (y0 + c * grid.t(j))).abs() < 1e-12);
            }
        }

        #[test]
        fn holder_norm_of_lipschitz_path(slope in 0.1f64..3.0) {
            let grid = TimeGrid::new(0.1, 10).unwrap();
            let y = Trajectory::from_fn(grid, 1, |t| DVector::from_vec(vec![slope * t])).unwrap();
            prop_assert!((holder_norm(&y, 1.0) - 2.0 * slope).abs() < 1e-12);
        }
    }
}
