//! Quadrature for weakly singular integrands.
//!
//! Double-exponential (tanh-sinh) integration passes the distances to both
//! endpoints to the integrand, so factors like `(t-s)^{α-1}` are evaluated without
//! cancellation. Product-integration weights integrate `t^{-β}` exactly against
//! piecewise-linear data.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

/// `∫_a^b f(s) ds` where `f` receives `(s - a, b - s)`.
pub fn tanh_sinh(a: f64, b: f64, f: impl Fn(f64, f64) -> f64, tol: f64) -> f64 {
    let half = 0.5 * (b - a);
    if half <= 0.0 {
        return 0.0;
    }
    let eval = |tau: f64| -> f64 {
        let y = FRAC_PI_2 * tau.sinh();
        let e = (-2.0 * y.abs()).exp();
        // distance from the nearer endpoint, in units of the half-length
        let near = 2.0 * e / (1.0 + e);
        let far = 2.0 - near;
        if near == 0.0 {
            return 0.0;
        }
        let weight = FRAC_PI_2 * tau.cosh() * near * far;
        let (left, right) = if y < 0.0 { (near, far) } else { (far, near) };
        let v = f(half * left, half * right);
        if v.is_finite() {
            weight * v
        } else {
            0.0
        }
    };
    let tau_max = 6.5;
    let mut step = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1;
    while k as f64 * step <= tau_max {
        let t = k as f64 * step;
        sum += eval(t) + eval(-t);
        k += 1;
    }
    let mut estimate = sum * step * half;
    for _ in 0..12 {
        step *= 0.5;
        let mut k = 1;
        while k as f64 * step <= tau_max {
            let t = k as f64 * step;
            sum += eval(t) + eval(-t);
            k += 2;
        }
        let next = sum * step * half;
        let converged = (next - estimate).abs() <= tol * next.abs().max(1e-300);
        estimate = next;
        if converged {
            break;
        }
    }
    estimate
}

/// `∫_u^t (t-s)^{α-1} (s-u)^{-α} ds`, which equals `π / sin(πα)` for every `u < t`.
pub fn factorization_integral(alpha: f64, u: f64, t: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("α = {alpha} must lie in (0, 1)")));
    }
    if !(u < t) {
        return Err(Error::Domain(format!("need u < t, got u = {u}, t = {t}")));
    }
    Ok(tanh_sinh(
        u,
        t,
        |from_u, to_t| to_t.powf(alpha - 1.0) * from_u.powf(-alpha),
        1e-14,
    ))
}

pub fn factorization_constant(alpha: f64) -> f64 {
    PI / (PI * alpha).sin()
}

/// `C_{α,m,T} = ((m-1)/(αm-1))^{(m-1)/m} T^{(αm-1)/m}`, the Hölder constant
/// for `l(t) = ∫_0^t (t-s)^{α-1} z(s) ds`; requires `αm > 1`.
pub fn singular_kernel_constant(alpha: f64, m: f64, horizon: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) || !(m > 1.0) || alpha * m <= 1.0 {
        return Err(Error::Domain(format!(
            "need α ∈ (0, 1], m > 1 and αm > 1 (got α = {alpha}, m = {m})"
        )));
    }
    Ok(((m - 1.0) / (alpha * m - 1.0)).powf((m - 1.0) / m) * horizon.powf((alpha * m - 1.0) / m))
}

/// Weights `w_j` with `Σ_j w_j f_j = ∫_0^{t_n} t^{-β} f(t) dt` exactly for `f`
/// piecewise linear on `t_j = j·h`, `j = 0..=n`.
pub fn product_weights_power(beta: f64, h: f64, n: usize) -> Result<Vec<f64>> {
    if !(beta < 1.0) {
        return Err(Error::Domain(format!("t^(-{beta}) is not integrable at 0")));
    }
    let mut w = vec![0.0; n + 1];
    let p = 1.0 - beta;
    for j in 0..n {
        let a = j as f64 * h;
        let b = (j + 1) as f64 * h;
        // I0 = ∫_a^b t^{-β}, I1 = ∫_a^b t^{1-β}
        let (i0, i1) = if j == 0 {
            (b.powf(p) / p, b.powf(p + 1.0) / (p + 1.0))
        } else {
            let lr = (h / a).ln_1p();
            (
                a.powf(p) * (p * lr).exp_m1() / p,
                a.powf(p + 1.0) * ((p + 1.0) * lr).exp_m1() / (p + 1.0),
            )
        };
        w[j] += (b * i0 - i1) / h;
        w[j + 1] += (i1 - a * i0) / h;
    }
    Ok(w)
}

/// `∫_{s_j}^{s_{j+1}} (t - s)^{α-1} ds = [(t-s_j)^α - (t-s_{j+1})^α]/α` for `s_{j+1} ≤ t`.
pub fn left_singular_cell(alpha: f64, t: f64, s_lo: f64, s_hi: f64) -> f64 {
    ((t - s_lo).powf(alpha) - (t - s_hi).max(0.0).powf(alpha)) / alpha
}
