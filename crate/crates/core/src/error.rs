use thiserror::Error;

/// Errors raised by the numerical routines and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular resolvent: n = {n} is an eigenvalue of the generator")]
    SingularResolvent { n: f64 },

    #[error("invalid Yosida approximant: n = {n} must exceed the spectral bound {bound}")]
    InvalidApproximant { n: f64, bound: f64 },

    #[error("fractional power undefined: eigenvalue {eigenvalue} at mode {mode} is not negative")]
    UndefinedFractionalPower { mode: usize, eigenvalue: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
