//! Experiment configuration: one JSON document per run.

use std::path::PathBuf;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::BProcess;
use crate::convolution::{AlphaWindow, ConvolutionConfig};
use crate::delay::{DelayOperator, DelaySpec, MatrixSpec, Segment};
use crate::deterministic::ForcingFunction;
use crate::error::{Error, Result};
use crate::noise::QWiener;
use crate::path::TimeGrid;
use crate::spectral::SpectralModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Green,
    Simulate,
    Regularity,
    Bdg,
    Yosida,
    Deterministic,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Green => "green",
            Kind::Simulate => "simulate",
            Kind::Regularity => "regularity",
            Kind::Bdg => "bdg",
            Kind::Yosida => "yosida",
            Kind::Deterministic => "deterministic",
        }
    }
}

/// Eigenvalues of `A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `a_k = −k²π²`, `k = 1..=n`.
    Laplacian(usize),
    Eigenvalues(Vec<f64>),
}

impl ModelSpec {
    pub fn build(&self) -> Result<SpectralModel> {
        match self {
            ModelSpec::Laplacian(0) => Err(Error::Config("laplacian needs at least one mode".into())),
            ModelSpec::Laplacian(n) => Ok(SpectralModel::dirichlet_laplacian(*n)),
            ModelSpec::Eigenvalues(a) => SpectralModel::new(a.clone(), "custom"),
        }
    }
}

/// Eigenvalues of `Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaSpec {
    /// `λ_k = k^{−power}`.
    PowerLaw(f64),
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub lambdas: LambdaSpec,
    #[serde(default)]
    pub seed: u64,
    /// Monte Carlo ensemble size.
    pub paths: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            lambdas: LambdaSpec::PowerLaw(2.0),
            seed: 0,
            paths: 1000,
        }
    }
}

impl NoiseSpec {
    pub fn build(&self, n: usize) -> Result<QWiener> {
        match &self.lambdas {
            LambdaSpec::PowerLaw(p) => QWiener::power_law(n, *p, self.seed),
            LambdaSpec::Explicit(l) => QWiener::new(l.clone(), self.seed),
        }
    }
}

/// Diffusion coefficient `B(t) = m(t)·B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DiffusionSpec {
    Constant {
        b: MatrixSpec,
    },
    Schedule {
        breaks: Vec<f64>,
        scales: Vec<f64>,
        b: MatrixSpec,
    },
    Adapted {
        interval: f64,
        low: f64,
        high: f64,
        b: MatrixSpec,
    },
}

impl Default for DiffusionSpec {
    fn default() -> Self {
        DiffusionSpec::Constant {
            b: MatrixSpec::Identity(1.0),
        }
    }
}

impl DiffusionSpec {
    pub fn build(&self, rows: usize) -> Result<BProcess> {
        Ok(match self {
            DiffusionSpec::Constant { b } => BProcess::Constant(b.build(rows)?),
            DiffusionSpec::Schedule { breaks, scales, b } => BProcess::Schedule {
                breaks: breaks.clone(),
                scales: scales.clone(),
                b: b.build(rows)?,
            },
            DiffusionSpec::Adapted { interval, low, high, b } => BProcess::Adapted {
                interval: *interval,
                low: *low,
                high: *high,
                b: b.build(rows)?,
            },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSpec {
    Factorization,
    Moment,
    Bdg,
}

impl From<WindowSpec> for AlphaWindow {
    fn from(w: WindowSpec) -> Self {
        match w {
            WindowSpec::Factorization => AlphaWindow::Factorization,
            WindowSpec::Moment => AlphaWindow::Moment,
            WindowSpec::Bdg => AlphaWindow::Bdg,
        }
    }
}

fn default_n_list() -> Vec<f64> {
    vec![10.0, 100.0, 1000.0]
}
fn default_volterra_terms() -> usize {
    10
}
fn default_lags() -> usize {
    crate::analysis::DEFAULT_LAGS
}
fn default_export_paths() -> usize {
    10
}
fn default_probes() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    /// Horizon `T`; must be a multiple of `r/M`.
    pub horizon: f64,
    /// θ-grid steps `M`; the time step is `r/M`.
    pub m: usize,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub window: Option<WindowSpec>,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<f64>,
    /// θ-resolutions for the moment inequality; defaults to `[M, 2M]`.
    #[serde(default)]
    pub m_list: Vec<usize>,
    #[serde(default = "default_volterra_terms")]
    pub volterra_terms: usize,
    #[serde(default = "default_lags")]
    pub lags: usize,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub target_band: Option<[f64; 2]>,
    #[serde(default)]
    pub fractional_band: Option<[f64; 2]>,
    #[serde(default = "default_export_paths")]
    pub export_paths: usize,
    #[serde(default = "default_probes")]
    pub probes: usize,
}

/// Data of the deterministic delayed problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterministicSpec {
    pub phi0: Vec<f64>,
    /// Constant history on `[−r, 0)`.
    pub phi1: Vec<f64>,
    #[serde(default)]
    pub forcing: ForcingSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingSpec {
    #[default]
    Zero,
    Constant(Vec<f64>),
    /// `offset + slope·t`.
    Affine { offset: Vec<f64>, slope: Vec<f64> },
    /// `scale·e^{rate·t}`.
    Exponential { scale: Vec<f64>, rate: f64 },
}

impl ForcingSpec {
    pub fn build(&self, n: usize) -> Result<ForcingFunction> {
        let check = |v: &Vec<f64>| {
            if v.len() != n {
                Err(Error::Shape(format!("forcing vector has {} entries, expected {n}", v.len())))
            } else {
                Ok(DVector::from_vec(v.clone()))
            }
        };
        Ok(match self {
            ForcingSpec::Zero => ForcingFunction::zero(n),
            ForcingSpec::Constant(c) => ForcingFunction::constant(check(c)?),
            ForcingSpec::Affine { offset, slope } => {
                let (o, s) = (check(offset)?, check(slope)?);
                ForcingFunction::new(n, 1.0, move |t| &o + &s * t)
            }
            ForcingSpec::Exponential { scale, rate } => {
                let (c, rate) = (check(scale)?, *rate);
                ForcingFunction::new(n, 1.0, move |t| &c * (rate * t).exp())
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<Kind>,
    pub model: ModelSpec,
    pub delay: DelaySpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub diffusion: DiffusionSpec,
    pub numerics: Numerics,
    #[serde(default)]
    pub deterministic: Option<DeterministicSpec>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Components built from a validated configuration.
pub struct Built {
    pub model: SpectralModel,
    pub op: DelayOperator,
    pub grid: TimeGrid,
    pub q: QWiener,
    pub diffusion: BProcess,
}

impl ExperimentConfig {
    /// Parses JSON, reporting the failing field path with line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Parse(format!("at `{path}`: {}", e.into_inner()))
        })
    }

    pub fn window(&self, kind: Kind) -> AlphaWindow {
        match (self.numerics.window, kind) {
            (Some(w), _) => w.into(),
            (None, Kind::Bdg) => AlphaWindow::Bdg,
            (None, _) => AlphaWindow::Moment,
        }
    }

    pub fn m_list(&self) -> Vec<usize> {
        if self.numerics.m_list.is_empty() {
            vec![self.numerics.m, 2 * self.numerics.m]
        } else {
            self.numerics.m_list.clone()
        }
    }

    /// Checks every cross-field constraint and builds the shared components.
    pub fn validate(&self, kind: Kind) -> Result<Built> {
        if let Some(k) = self.kind {
            if k != kind {
                return Err(Error::Config(format!(
                    "config declares kind `{}` but `{}` was requested",
                    k.name(),
                    kind.name()
                )));
            }
        }
        let nm = &self.numerics;
        let model = self.model.build()?;
        let n = model.dim();
        if nm.m == 0 {
            return Err(Error::Config("numerics.m must be positive".into()));
        }
        let op = self.delay.build(n, nm.m)?;
        let grid = TimeGrid::covering(op.grid().step(), nm.horizon)?;
        let q = self.noise.build(n)?;
        if q.dim() != n {
            return Err(Error::Shape(format!("Q has {} modes but the model has {n}", q.dim())));
        }
        let diffusion = self.diffusion.build(n)?;
        if kind != Kind::Bdg && !matches!(diffusion, BProcess::Constant(_)) {
            return Err(Error::Config(format!(
                "time-dependent diffusion is only supported by `bdg`, not `{}`",
                kind.name()
            )));
        }
        match (nm.alpha, nm.p) {
            (Some(alpha), Some(p)) => {
                ConvolutionConfig::new(alpha, p, self.window(kind))?;
            }
            (Some(alpha), None) if !(alpha > 0.0 && alpha < 0.5) => {
                return Err(Error::Config(format!("α = {alpha} must lie in (0, 1/2)")));
            }
            _ => {}
        }
        if matches!(kind, Kind::Bdg | Kind::Yosida) && nm.p.is_none() {
            return Err(Error::Config(format!("`{}` needs numerics.p", kind.name())));
        }
        if let Some(p) = nm.p {
            if !(p > 2.0) {
                return Err(Error::Config(format!("moment order p = {p} must exceed 2")));
            }
        }
        if nm.n_list.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Config("numerics.n_list entries must be positive".into()));
        }
        let ml = self.m_list();
        if ml.windows(2).any(|w| w[1] <= w[0]) || ml.contains(&0) {
            return Err(Error::Config("numerics.m_list must be positive and increasing".into()));
        }
        if let Some(g) = nm.gamma {
            if !(g > 0.0 && g < 0.5) {
                return Err(Error::Config(format!("γ = {g} must lie in (0, 1/2)")));
            }
            if let Some(a) = nm.alpha {
                if g >= 0.5 - a {
                    return Err(Error::Config(format!("γ = {g} must be below 1/2 − α = {}", 0.5 - a)));
                }
            }
        }
        if matches!(kind, Kind::Simulate | Kind::Regularity | Kind::Bdg | Kind::Yosida) && self.noise.paths < 2 {
            return Err(Error::Config("noise.paths must be at least 2".into()));
        }
        if kind == Kind::Deterministic {
            let d = self
                .deterministic
                .as_ref()
                .ok_or_else(|| Error::Config("`deterministic` needs a `deterministic` section".into()))?;
            self.deterministic_data(d, &op)?;
        }
        Ok(Built {
            model,
            op,
            grid,
            q,
            diffusion,
        })
    }

    pub fn deterministic_data(
        &self,
        d: &DeterministicSpec,
        op: &DelayOperator,
    ) -> Result<(DVector<f64>, Segment, ForcingFunction)> {
        let n = op.dim();
        if d.phi0.len() != n || d.phi1.len() != n {
            return Err(Error::Shape(format!("phi0 and phi1 need {n} entries")));
        }
        let phi0 = DVector::from_vec(d.phi0.clone());
        let phi1 = Segment::constant(op.grid(), &DVector::from_vec(d.phi1.clone()));
        Ok((phi0, phi1, d.forcing.build(n)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"{
        "model": {"eigenvalues": [0.0]},
        "delay": {"r": 1.0, "b1": {"identity": 1.0}, "b0": "zero", "kernel": "zero"},
        "noise": {"lambdas": {"explicit": [1.0]}, "seed": 1, "paths": 10},
        "numerics": {"horizon": 2.0, "m": 100}
    }"#;

    #[test]
    fn scalar_config_parses_and_validates() {
        let c = ExperimentConfig::from_json(SCALAR).unwrap();
        let b = c.validate(Kind::Green).unwrap();
        assert_eq!(b.grid.steps(), 200);
        assert_eq!(c.m_list(), vec![100, 200]);
        assert!(matches!(c.validate(Kind::Bdg), Err(Error::Config(_))));
    }

    #[test]
    fn parse_errors_name_the_field() {
        let bad = SCALAR.replace(r#""kernel": "zero""#, r#""kernel": {"polynom": [1]}"#);
        match ExperimentConfig::from_json(&bad) {
            Err(Error::Parse(msg)) => assert!(msg.contains("delay.kernel") && msg.contains("line"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let unknown = SCALAR.replace(r#""m": 100"#, r#""m": 100, "mm": 3"#);
        assert!(matches!(ExperimentConfig::from_json(&unknown), Err(Error::Parse(_))));
    }

    #[test]
    fn window_violation_quotes_both_constraints() {
        let c = SCALAR.replace(r#""m": 100"#, r#""m": 100, "alpha": 0.1, "p": 4.0"#);
        let c = ExperimentConfig::from_json(&c).unwrap();
        match c.validate(Kind::Simulate) {
            Err(Error::Config(msg)) => assert!(msg.contains("(1/p, 1/2)") && msg.contains("(p-2)/(2p)"), "{msg}"),
            other => panic!("{:?}", other.err()),
        }
    }

    #[test]
    fn off_grid_horizon_is_rejected() {
        let c = SCALAR.replace(r#""horizon": 2.0"#, r#""horizon": 2.005"#);
        let c = ExperimentConfig::from_json(&c).unwrap();
        assert!(matches!(c.validate(Kind::Green), Err(Error::Config(_))));
    }
}
