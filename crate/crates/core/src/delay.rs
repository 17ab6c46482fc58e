//! Delay operators, history segments and the structure operator.
//!
//! A delay operator acts on an `H`-valued history `φ` on `[-r, 0]`:
//!
//! ```text
//! F φ = Σ_i A_i φ(-r_i) + ∫_{-r}^0 A_0(θ) φ(θ) dθ
//! ```
//!
//! where the distributed part is either `a(θ)·B_0` (scalar kernel) or a
//! matrix-valued kernel sampled per node. Histories live on a uniform θ-grid
//! with step `r/M`; discrete delays are snapped to grid nodes and the
//! distributed integral is a composite trapezoid on the same grid.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::DenseOperator;

/// Uniform grid `θ_l = -r + l·r/M`, `l = 0..=M`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaGrid {
    r: f64,
    m: usize,
}

impl ThetaGrid {
    pub fn new(r: f64, m: usize) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Config(format!("delay horizon r = {r} must be positive")));
        }
        if m < 1 {
            return Err(Error::Config("θ-grid needs at least one step".into()));
        }
        Ok(Self { r, m })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Number of steps `M`; the grid has `M + 1` nodes.
    pub fn steps(&self) -> usize {
        self.m
    }

    pub fn step(&self) -> f64 {
        self.r / self.m as f64
    }

    pub fn node(&self, l: usize) -> f64 {
        if l == 0 {
            -self.r
        } else {
            -((self.m - l) as f64) * self.step()
        }
    }

    /// Trapezoid weights on the full interval `[-r, 0]`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        trapezoid_weights(self.m + 1, self.step())
    }
}

/// Composite trapezoid weights for `nodes` equispaced points with spacing `h`.
pub(crate) fn trapezoid_weights(nodes: usize, h: f64) -> Vec<f64> {
    match nodes {
        0 | 1 => vec![0.0; nodes],
        _ => {
            let mut w = vec![h; nodes];
            w[0] = 0.5 * h;
            w[nodes - 1] = 0.5 * h;
            w
        }
    }
}

/// An `H`-valued history on `[-r, 0]` sampled at the nodes of a [`ThetaGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    grid: ThetaGrid,
    dim: usize,
    // node-major: values[l * dim + k]
    values: Vec<f64>,
}

impl Segment {
    pub fn from_values(grid: ThetaGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != (grid.steps() + 1) * dim {
            return Err(Error::Shape(format!(
                "segment needs {} values, got {}",
                (grid.steps() + 1) * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("segment has non-finite values".into()));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn from_fn(grid: ThetaGrid, dim: usize, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity((grid.steps() + 1) * dim);
        for l in 0..=grid.steps() {
            let v = f(grid.node(l));
            if v.len() != dim {
                return Err(Error::Shape(format!(
                    "history function returned length {}, expected {dim}",
                    v.len()
                )));
            }
            values.extend(v.iter());
        }
        Self::from_values(grid, dim, values)
    }

    pub fn zeros(grid: ThetaGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; (grid.steps() + 1) * dim],
        }
    }

    pub fn constant(grid: ThetaGrid, c: &DVector<f64>) -> Self {
        let dim = c.len();
        let mut values = Vec::with_capacity((grid.steps() + 1) * dim);
        for _ in 0..=grid.steps() {
            values.extend(c.iter());
        }
        Self { grid, dim, values }
    }

    pub fn grid(&self) -> ThetaGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node(&self, l: usize) -> &[f64] {
        &self.values[l * self.dim..(l + 1) * self.dim]
    }

    pub fn node_vector(&self, l: usize) -> DVector<f64> {
        DVector::from_column_slice(self.node(l))
    }

    /// Value at `θ ∈ [-r, 0]` by linear interpolation between nodes.
    pub fn value_at(&self, theta: f64) -> Result<DVector<f64>> {
        let r = self.grid.r();
        if !(theta >= -r) || theta > 0.0 {
            return Err(Error::Domain(format!("θ = {theta} outside [-{r}, 0]")));
        }
        let m = self.grid.steps();
        if theta == 0.0 {
            return Ok(self.node_vector(m));
        }
        let pos = (theta + r) / self.grid.step();
        let l = (pos.floor() as usize).min(m);
        let frac = pos - l as f64;
        if frac <= 0.0 || l == m {
            return Ok(self.node_vector(l));
        }
        let lo = self.node(l);
        let hi = self.node(l + 1);
        Ok(DVector::from_iterator(
            self.dim,
            lo.iter().zip(hi).map(|(a, b)| a + frac * (b - a)),
        ))
    }

    /// Right extension: the segment on `[-r, 0]`, zero on `(0, ∞)`.
    pub fn right_extension(&self, t: f64) -> Result<DVector<f64>> {
        if t > 0.0 {
            return Ok(DVector::zeros(self.dim));
        }
        if !(t >= -self.grid.r()) {
            return Err(Error::Domain(format!(
                "right extension evaluated at t = {t} < -r"
            )));
        }
        self.value_at(t)
    }

    /// Trapezoid approximation of `∫_{-r}^0 ‖φ(θ)‖^p dθ`.
    pub fn lp_norm_pow(&self, p: f64) -> f64 {
        let w = self.grid.trapezoid_weights();
        (0..=self.grid.steps())
            .map(|l| w[l] * euclid(self.node(l)).powf(p))
            .sum()
    }
}

pub(crate) fn euclid(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Distributed part of a delay operator.
#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    None,
    /// `a(θ)·B_0`, with `a` sampled at the θ-grid nodes.
    Scalar { samples: Vec<f64>, b0: DenseOperator },
    /// Matrix-valued `A_0(θ)` sampled at the θ-grid nodes.
    Matrix { samples: Vec<DenseOperator> },
}

impl Kernel {
    pub fn scalar_from_fn(grid: ThetaGrid, a: impl Fn(f64) -> f64, b0: DenseOperator) -> Self {
        let samples = (0..=grid.steps()).map(|l| a(grid.node(l))).collect();
        Kernel::Scalar { samples, b0 }
    }
}

/// A point delay `A_i φ(-r_i)` with `r_i` snapped to a grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTerm {
    delay: f64,
    nodes_back: usize,
    op: DenseOperator,
}

impl DiscreteTerm {
    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn op(&self) -> &DenseOperator {
        &self.op
    }
}

/// Linear delay operator `F` on histories over `[-r, 0]`, discretized on a θ-grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayOperator {
    grid: ThetaGrid,
    dim: usize,
    terms: Vec<DiscreteTerm>,
    kernel: Kernel,
    // trapezoid weight times scalar kernel value, per node; zero when no scalar kernel
    kernel_weights: Vec<f64>,
}

impl DelayOperator {
    /// `F = 0`.
    pub fn zero(dim: usize, grid: ThetaGrid) -> Self {
        Self {
            grid,
            dim,
            terms: Vec::new(),
            kernel: Kernel::None,
            kernel_weights: vec![0.0; grid.steps() + 1],
        }
    }

    /// `F φ = B_1 φ(-r) + ∫_{-r}^0 a(θ) B_0 φ(θ) dθ`.
    pub fn standard(
        grid: ThetaGrid,
        b1: DenseOperator,
        a: impl Fn(f64) -> f64,
        b0: DenseOperator,
    ) -> Result<Self> {
        let kernel = Kernel::scalar_from_fn(grid, a, b0);
        Self::general(grid, vec![(grid.r(), b1)], kernel)
    }

    /// `F φ = Σ_i A_i φ(-r_i) + ∫ A_0(θ) φ(θ) dθ` with `0 ≤ r_1 ≤ … ≤ r_m ≤ r`.
    pub fn general(grid: ThetaGrid, terms: Vec<(f64, DenseOperator)>, kernel: Kernel) -> Result<Self> {
        let dim = match (&kernel, terms.first()) {
            (_, Some((_, op))) => op.rows(),
            (Kernel::Scalar { b0, .. }, None) => b0.rows(),
            (Kernel::Matrix { samples }, None) => samples
                .first()
                .map(|s| s.rows())
                .ok_or_else(|| Error::Shape("empty matrix kernel".into()))?,
            (Kernel::None, None) => {
                return Err(Error::Config(
                    "delay operator without terms; use DelayOperator::zero".into(),
                ))
            }
        };
        let h = grid.step();
        let r = grid.r();
        let mut prev = 0.0;
        let mut snapped = Vec::with_capacity(terms.len());
        for (delay, op) in terms {
            if !(0.0..=r * (1.0 + 1e-12)).contains(&delay) || delay < prev {
                return Err(Error::Config(format!(
                    "discrete delays must satisfy 0 ≤ r_1 ≤ … ≤ r_m ≤ r = {r}; got {delay}"
                )));
            }
            prev = delay;
            let nodes_back = (delay / h).round() as usize;
            if (nodes_back as f64 * h - delay).abs() > 1e-9 * r {
                return Err(Error::Config(format!(
                    "delay {delay} is not on the θ-grid with step {h}"
                )));
            }
            check_square(&op, dim)?;
            snapped.push(DiscreteTerm {
                delay,
                nodes_back: nodes_back.min(grid.steps()),
                op,
            });
        }
        let nodes = grid.steps() + 1;
        let w = grid.trapezoid_weights();
        let kernel_weights = match &kernel {
            Kernel::None => vec![0.0; nodes],
            Kernel::Scalar { samples, b0 } => {
                check_square(b0, dim)?;
                check_kernel_samples(samples.len(), nodes)?;
                if samples.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidKernel("kernel samples are not finite".into()));
                }
                samples.iter().zip(&w).map(|(a, wl)| a * wl).collect()
            }
            Kernel::Matrix { samples } => {
                check_kernel_samples(samples.len(), nodes)?;
                for s in samples {
                    check_square(s, dim)?;
                }
                vec![0.0; nodes]
            }
        };
        Ok(Self {
            grid,
            dim,
            terms: snapped,
            kernel,
            kernel_weights,
        })
    }

    pub fn grid(&self) -> ThetaGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[DiscreteTerm] {
        &self.terms
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// True when `F` is identically zero.
    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.op.is_zero())
            && match &self.kernel {
                Kernel::None => true,
                Kernel::Scalar { samples, b0 } => b0.is_zero() || samples.iter().all(|&a| a == 0.0),
                Kernel::Matrix { samples } => samples.iter().all(|s| s.is_zero()),
            }
    }

    fn check_segment(&self, seg: &Segment) -> Result<()> {
        if seg.grid() != self.grid || seg.dim() != self.dim {
            return Err(Error::Shape(format!(
                "segment grid (r = {}, M = {}, N = {}) does not match operator (r = {}, M = {}, N = {})",
                seg.grid().r(),
                seg.grid().steps(),
                seg.dim(),
                self.grid.r(),
                self.grid.steps(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Applies `F` to node blocks: `node(l)` is the column-major `N×cols`
    /// value at `θ_l` (or `None` for zero), and the result is added to `out`.
    pub fn apply_blocks<'a>(
        &self,
        cols: usize,
        node: &dyn Fn(usize) -> Option<&'a [f64]>,
        out: &mut [f64],
    ) {
        let n = self.dim;
        let m = self.grid.steps();
        let mut out_view = DMatrixViewMut::from_slice(out, n, cols);
        for term in &self.terms {
            if let Some(x) = node(m - term.nodes_back) {
                let x = DMatrixView::from_slice(x, n, cols);
                out_view.gemm(1.0, term.op.matrix(), &x, 1.0);
            }
        }
        match &self.kernel {
            Kernel::None => {}
            Kernel::Scalar { b0, .. } => {
                let mut acc = vec![0.0; n * cols];
                let mut any = false;
                for (l, &w) in self.kernel_weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    if let Some(x) = node(l) {
                        any = true;
                        for (a, xv) in acc.iter_mut().zip(x) {
                            *a += w * xv;
                        }
                    }
                }
                if any {
                    let acc = DMatrixView::from_slice(&acc, n, cols);
                    out_view.gemm(1.0, b0.matrix(), &acc, 1.0);
                }
            }
            Kernel::Matrix { samples } => {
                let w = self.grid.trapezoid_weights();
                for (l, a0) in samples.iter().enumerate() {
                    if let Some(x) = node(l) {
                        let x = DMatrixView::from_slice(x, n, cols);
                        out_view.gemm(w[l], a0.matrix(), &x, 1.0);
                    }
                }
            }
        }
    }

    /// `F φ` for a sampled history.
    pub fn apply(&self, seg: &Segment) -> Result<DVector<f64>> {
        self.check_segment(seg)?;
        let mut out = vec![0.0; self.dim];
        self.apply_blocks(1, &|l| Some(seg.node(l)), &mut out);
        Ok(DVector::from_vec(out))
    }

    /// Structure operator on node blocks: the value at output node `l` is
    /// `F` applied to the history shifted by `-θ_l` and extended by zero to the right.
    pub fn structure_blocks<'a>(
        &self,
        cols: usize,
        node: &dyn Fn(usize) -> Option<&'a [f64]>,
        out_node: usize,
        out: &mut [f64],
    ) {
        let n = self.dim;
        let m = self.grid.steps();
        let l = out_node;
        let h = self.grid.step();
        let mut out_view = DMatrixViewMut::from_slice(out, n, cols);
        for term in &self.terms {
            // φ(-θ_l - r_i) is inside [-r, 0] iff l ≥ M - d_i
            if l + term.nodes_back >= m {
                if let Some(x) = node(2 * m - l - term.nodes_back) {
                    let x = DMatrixView::from_slice(x, n, cols);
                    out_view.gemm(1.0, term.op.matrix(), &x, 1.0);
                }
            }
        }
        if l == 0 {
            return;
        }
        // ∫_{-r}^{θ_l} A_0(s) φ(s - θ_l) ds by trapezoid on nodes q = 0..=l
        let w = trapezoid_weights(l + 1, h);
        match &self.kernel {
            Kernel::None => {}
            Kernel::Scalar { samples, b0 } => {
                let mut acc = vec![0.0; n * cols];
                let mut any = false;
                for q in 0..=l {
                    let c = w[q] * samples[q];
                    if c == 0.0 {
                        continue;
                    }
                    if let Some(x) = node(q + m - l) {
                        any = true;
                        for (a, xv) in acc.iter_mut().zip(x) {
                            *a += c * xv;
                        }
                    }
                }
                if any {
                    let acc = DMatrixView::from_slice(&acc, n, cols);
                    out_view.gemm(1.0, b0.matrix(), &acc, 1.0);
                }
            }
            Kernel::Matrix { samples } => {
                for q in 0..=l {
                    if let Some(x) = node(q + m - l) {
                        let x = DMatrixView::from_slice(x, n, cols);
                        out_view.gemm(w[q], samples[q].matrix(), &x, 1.0);
                    }
                }
            }
        }
    }

    /// `(Sφ)(θ) = F φ⃗_{-θ}` on the θ-grid.
    pub fn structure_apply(&self, seg: &Segment) -> Result<Segment> {
        self.check_segment(seg)?;
        let n = self.dim;
        let mut values = vec![0.0; (self.grid.steps() + 1) * n];
        for (l, chunk) in values.chunks_mut(n).enumerate() {
            self.structure_blocks(1, &|q| Some(seg.node(q)), l, chunk);
        }
        Segment::from_values(self.grid, n, values)
    }

    /// Structure operator applied to a matrix-valued segment; `node(l)` gives `J(θ_l)`
    /// (`N×N`, column-major) and the result holds `(SJ)(θ_l)` for each node.
    pub fn structure_matrix_segment<'a>(
        &self,
        node: &dyn Fn(usize) -> Option<&'a [f64]>,
    ) -> Vec<DMatrix<f64>> {
        let n = self.dim;
        (0..=self.grid.steps())
            .map(|l| {
                let mut out = vec![0.0; n * n];
                self.structure_blocks(n, node, l, &mut out);
                DMatrix::from_vec(n, n, out)
            })
            .collect()
    }

    /// `‖A_0‖_{L^q([-r,0])}` by trapezoid on the grid (`q = ∞` gives the max).
    pub fn kernel_q_norm(&self, q: f64) -> Result<f64> {
        let magnitudes: Vec<f64> = match &self.kernel {
            Kernel::None => return Ok(0.0),
            Kernel::Scalar { samples, b0 } => {
                let nb = b0.norm();
                samples.iter().map(|a| a.abs() * nb).collect()
            }
            Kernel::Matrix { samples } => samples.iter().map(|s| s.norm()).collect(),
        };
        if magnitudes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidKernel("kernel norm is not finite on the grid".into()));
        }
        let norm = if q.is_infinite() {
            magnitudes.iter().copied().fold(0.0, f64::max)
        } else {
            let w = self.grid.trapezoid_weights();
            let s: f64 = magnitudes.iter().zip(&w).map(|(v, wl)| wl * v.powf(q)).sum();
            s.powf(1.0 / q)
        };
        if !norm.is_finite() {
            return Err(Error::InvalidKernel(format!("kernel L^{q} norm is not finite")));
        }
        Ok(norm)
    }

    /// `‖A_0‖` restricted to `[-δ, 0]` in `L^1`; used for the contraction factor of the
    /// step-by-step existence argument.
    pub fn kernel_l1_tail(&self, delta: f64) -> f64 {
        let m = self.grid.steps();
        let h = self.grid.step();
        let k = ((delta / h + 1e-9).floor() as usize).min(m);
        if k == 0 {
            return 0.0;
        }
        let w = trapezoid_weights(k + 1, h);
        let mag = |l: usize| match &self.kernel {
            Kernel::None => 0.0,
            Kernel::Scalar { samples, b0 } => samples[l].abs() * b0.norm(),
            Kernel::Matrix { samples } => samples[l].norm(),
        };
        (0..=k).map(|i| w[i] * mag(m - k + i)).sum()
    }

    /// Constant `M_p` of the `L^p` extension
    /// `∫_0^T ‖F y_t‖^p dt ≤ M_p ∫_{-r}^T ‖y‖^p dt`:
    /// `M_p = (Σ_i ‖A_i‖ + ‖A_0‖_{L^q} r^{1/p})^p` with `1/p + 1/q = 1`.
    ///
    /// With a single term at `r_m = r` and a scalar kernel this is
    /// `(‖B_1‖ + ‖B_0‖ ‖a‖_{L^q} r^{1/p})^p`; with several point delays the sum of
    /// norms is a conservative bound.
    pub fn extension_constant(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::Config(format!("extension constant needs 1 ≤ p < ∞, got {p}")));
        }
        let q = if p == 1.0 { f64::INFINITY } else { p / (p - 1.0) };
        let point: f64 = self.terms.iter().map(|t| t.op.norm()).sum();
        let kernel = self.kernel_q_norm(q)?;
        Ok((point + kernel * self.grid.r().powf(1.0 / p)).powf(p))
    }

    /// Both sides of the `L^p` extension inequality for a path sampled on
    /// `[-r, T]` with the θ-grid step; `path` is node-major with `dim` values per node.
    /// Returns `(∫_0^T ‖F y_t‖^p dt, M_p ∫_{-r}^T ‖y‖^p dt)`, both by trapezoid.
    pub fn extension_sides(&self, path: &[f64], p: f64) -> Result<(f64, f64)> {
        let n = self.dim;
        let m = self.grid.steps();
        if !path.len().is_multiple_of(n) || path.len() / n < m + 1 {
            return Err(Error::Shape("path must cover at least [-r, 0] on the θ-grid".into()));
        }
        let nodes = path.len() / n;
        let steps = nodes - 1 - m;
        let h = self.grid.step();
        let wt = trapezoid_weights(steps + 1, h);
        let mut lhs = 0.0;
        let mut out = vec![0.0; n];
        for j in 0..=steps {
            out.iter_mut().for_each(|v| *v = 0.0);
            self.apply_blocks(
                1,
                &|l| Some(&path[(j + l) * n..(j + l + 1) * n]),
                &mut out,
            );
            lhs += wt[j] * euclid(&out).powf(p);
        }
        let wa = trapezoid_weights(nodes, h);
        let rhs_int: f64 = (0..nodes)
            .map(|i| wa[i] * euclid(&path[i * n..(i + 1) * n]).powf(p))
            .sum();
        Ok((lhs, self.extension_constant(p)? * rhs_int))
    }

    /// Both sides of `∫ ‖Sφ‖^p ≤ M_p ∫ ‖φ‖^p` on the θ-grid.
    pub fn structure_sides(&self, seg: &Segment, p: f64) -> Result<(f64, f64)> {
        let s = self.structure_apply(seg)?;
        Ok((s.lp_norm_pow(p), self.extension_constant(p)? * seg.lp_norm_pow(p)))
    }
}

/// Serializable description of a bounded operator on the truncated space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSpec {
    Zero,
    /// `c·I`.
    Identity(f64),
    Diagonal(Vec<f64>),
    /// Row-major entries.
    Dense(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn build(&self, n: usize) -> Result<DenseOperator> {
        match self {
            MatrixSpec::Zero => Ok(DenseOperator::zeros(n, n)),
            MatrixSpec::Identity(c) => {
                if !c.is_finite() {
                    return Err(Error::Config("identity scale must be finite".into()));
                }
                Ok(DenseOperator::identity(n).scaled(*c))
            }
            MatrixSpec::Diagonal(d) => {
                if d.len() != n {
                    return Err(Error::Shape(format!("diagonal has {} entries, expected {n}", d.len())));
                }
                DenseOperator::diagonal(d)
            }
            MatrixSpec::Dense(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Shape(format!("dense matrix must be {n}x{n}")));
                }
                DenseOperator::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }
}

/// Serializable scalar kernel `a(θ)` on `[-r, 0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Zero,
    Constant(f64),
    /// `Σ_i c_i θ^i`.
    Polynomial(Vec<f64>),
    /// `scale·e^{rate·θ}`.
    Exponential { scale: f64, rate: f64 },
    /// Values at the θ-grid nodes; the count must equal `M + 1`.
    Samples(Vec<f64>),
}

impl KernelSpec {
    pub fn samples(&self, grid: ThetaGrid) -> Result<Vec<f64>> {
        let nodes = grid.steps() + 1;
        let eval = |f: &dyn Fn(f64) -> f64| (0..nodes).map(|l| f(grid.node(l))).collect::<Vec<f64>>();
        let v = match self {
            KernelSpec::Zero => vec![0.0; nodes],
            KernelSpec::Constant(c) => vec![*c; nodes],
            KernelSpec::Polynomial(c) => eval(&|t| c.iter().rev().fold(0.0, |acc, ci| acc * t + ci)),
            KernelSpec::Exponential { scale, rate } => eval(&|t| scale * (rate * t).exp()),
            KernelSpec::Samples(s) => {
                check_kernel_samples(s.len(), nodes)?;
                s.clone()
            }
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidKernel("kernel is not finite on the θ-grid".into()));
        }
        Ok(v)
    }
}

/// `F φ = B_1 φ(-r) + ∫_{-r}^0 a(θ) B_0 φ(θ) dθ`, buildable at any θ-resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySpec {
    pub r: f64,
    pub b1: MatrixSpec,
    pub b0: MatrixSpec,
    pub kernel: KernelSpec,
}

impl DelaySpec {
    /// Operator on the θ-grid with `m` steps acting on `n` modes.
    pub fn build(&self, n: usize, m: usize) -> Result<DelayOperator> {
        let grid = ThetaGrid::new(self.r, m)?;
        let b1 = self.b1.build(n)?;
        let b0 = self.b0.build(n)?;
        let samples = self.kernel.samples(grid)?;
        DelayOperator::general(grid, vec![(self.r, b1)], Kernel::Scalar { samples, b0 })
    }
}

fn check_square(op: &DenseOperator, dim: usize) -> Result<()> {
    if op.rows() != dim || op.cols() != dim {
        return Err(Error::Shape(format!(
            "delay coefficient is {}x{}, expected {dim}x{dim}",
            op.rows(),
            op.cols()
        )));
    }
    Ok(())
}

fn check_kernel_samples(got: usize, nodes: usize) -> Result<()> {
    if got != nodes {
        return Err(Error::InvalidKernel(format!(
            "kernel has {got} samples, θ-grid has {nodes} nodes"
        )));
    }
    Ok(())
}
