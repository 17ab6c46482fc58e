//! Finite spectral truncation of the state space.
//!
//! The generator `A` is diagonal in a fixed orthonormal basis, so the semigroup,
//! the resolvent, the Yosida approximants and the fractional powers `(-A)^γ` all
//! act mode by mode and are exact. Every discretization error in the crate lives
//! in the time and delay quadratures built on top of this module.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal generator `A = diag(a_1, ..., a_N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    eigenvalues: Vec<f64>,
    label: String,
}

impl SpectralModel {
    pub fn new(eigenvalues: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Shape("spectral model needs at least one mode".into()));
        }
        if let Some(k) = eigenvalues.iter().position(|a| !a.is_finite()) {
            return Err(Error::Domain(format!("eigenvalue at mode {k} is not finite")));
        }
        Ok(Self {
            eigenvalues,
            label: label.into(),
        })
    }

    /// One-dimensional Dirichlet Laplacian on (0, 1): `a_k = -k²π²`, `k = 1..=n`.
    pub fn dirichlet_laplacian(n: usize) -> Self {
        let eigenvalues = (1..=n.max(1))
            .map(|k| -((k * k) as f64) * std::f64::consts::PI.powi(2))
            .collect();
        Self {
            eigenvalues,
            label: format!("dirichlet-laplacian-{n}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// True when every eigenvalue is strictly negative (analytic, exponentially stable case).
    pub fn is_analytic(&self) -> bool {
        self.eigenvalues.iter().all(|&a| a < 0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sup_{0 ≤ t ≤ T} ‖e^{tA}‖ = e^{max(a_k, 0)·T}`.
    pub fn semigroup_sup_norm(&self, horizon: f64) -> f64 {
        (self.max_eigenvalue().max(0.0) * horizon).exp()
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "vector of length {} applied to a model of dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Diagonal of `e^{tA}`.
    pub fn semigroup_factors(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("semigroup evaluated at t = {t} < 0")));
        }
        Ok(self.eigenvalues.iter().map(|a| (a * t).exp()).collect())
    }

    pub fn semigroup_apply(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        if t == 0.0 {
            return Ok(x.clone());
        }
        let f = self.semigroup_factors(t)?;
        Ok(DVector::from_iterator(
            x.len(),
            x.iter().zip(&f).map(|(xi, fi)| xi * fi),
        ))
    }

    pub fn semigroup_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        let f = self.semigroup_factors(t)?;
        Ok(DMatrix::from_diagonal(&DVector::from_vec(f)))
    }

    /// `A x`.
    pub fn generator_apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        Ok(DVector::from_iterator(
            x.len(),
            x.iter().zip(&self.eigenvalues).map(|(xi, a)| a * xi),
        ))
    }

    /// `R(n, A) x = (nI - A)^{-1} x`.
    pub fn resolvent_apply(&self, n: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        if self.eigenvalues.contains(&n) {
            return Err(Error::SingularResolvent { n });
        }
        Ok(DVector::from_iterator(
            x.len(),
            x.iter().zip(&self.eigenvalues).map(|(xi, a)| xi / (n - a)),
        ))
    }

    /// Yosida approximant `A_n = n² R(n, A) - nI`, diagonal with entries `n a_k / (n - a_k)`.
    pub fn yosida_generator(&self, n: f64) -> Result<SpectralModel> {
        let bound = self.max_eigenvalue();
        if !(n > bound) || !n.is_finite() {
            return Err(Error::InvalidApproximant { n, bound });
        }
        let eigenvalues = self.eigenvalues.iter().map(|&a| n * a / (n - a)).collect();
        Ok(SpectralModel {
            eigenvalues,
            label: format!("{}-yosida-{n}", self.label),
        })
    }

    /// Diagonal of `(-A)^γ`; requires a strictly negative spectrum.
    pub fn fractional_factors(&self, gamma: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Domain(format!(
                "fractional exponent {gamma} outside [0, 1]"
            )));
        }
        self.eigenvalues
            .iter()
            .enumerate()
            .map(|(mode, &a)| {
                if a < 0.0 {
                    Ok((-a).powf(gamma))
                } else {
                    Err(Error::UndefinedFractionalPower { mode, eigenvalue: a })
                }
            })
            .collect()
    }

    pub fn fractional_power_apply(&self, gamma: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        let f = self.fractional_factors(gamma)?;
        Ok(DVector::from_iterator(
            x.len(),
            x.iter().zip(&f).map(|(xi, fi)| xi * fi),
        ))
    }
}

const NORM_TOLERANCE: f64 = 1e-10;
const NORM_MAX_ITERATIONS: usize = 10_000;

/// A bounded operator between finite-dimensional coordinate spaces.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Shape("operator with an empty dimension".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("operator has non-finite entries".into()));
        }
        Ok(Self { matrix })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(rows, cols),
        }
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            matrix: &self.matrix * c,
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|&v| v == 0.0)
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.cols() {
            return Err(Error::Shape(format!(
                "vector of length {} applied to a {}x{} operator",
                x.len(),
                self.rows(),
                self.cols()
            )));
        }
        Ok(&self.matrix * x)
    }

    /// Operator 2-norm (largest singular value) by power iteration on `MᵀM`.
    pub fn norm(&self) -> f64 {
        operator_norm(&self.matrix)
    }
}

/// Largest singular value of `m` by power iteration on `mᵀm`.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let n = gram.nrows();
    // A start vector with generic entries; fall back to unit vectors if it
    // happens to lie in the null space.
    let starts = std::iter::once(DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64 + 0.01 * (i * i) as f64))
        .chain((0..n).map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            e
        }));
    let mut best = 0.0_f64;
    for start in starts {
        let mut v = start.normalize();
        let mut estimate = 0.0_f64;
        for _ in 0..NORM_MAX_ITERATIONS {
            let w = &gram * &v;
            let next = v.dot(&w);
            let wn = w.norm();
            if wn == 0.0 {
                break;
            }
            v = w / wn;
            let converged = (next - estimate).abs() <= NORM_TOLERANCE * next.abs();
            estimate = next;
            if converged {
                break;
            }
        }
        best = best.max(estimate);
        if best > 0.0 {
            break;
        }
    }
    best.max(0.0).sqrt()
}
