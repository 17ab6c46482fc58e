//! Retarded Green operators and retarded Ornstein-Uhlenbeck processes in a
//! diagonal spectral truncation.
//!
//! A generator `A = diag(a_1, …, a_N)` and a delay operator
//! `Fφ = Σ_i A_i φ(−r_i) + ∫_{−r}^0 A_0(θ) φ(θ) dθ` define the Green table
//! `G(t)`; a Q-Wiener process and a diffusion coefficient `B` drive the
//! stochastic convolution `W_G^B(t) = ∫_0^t G(t−s) B dW(s)`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod cli;
pub mod convolution;
pub mod delay;
pub mod deterministic;
pub mod error;
pub mod green;
pub mod noise;
pub mod path;
pub mod quadrature;
pub mod spectral;

pub use error::{Error, Result};
