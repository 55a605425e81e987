//! The face-lift benchmark: `d = 1`, `μ = 0`, `σ = 1`, `f = 1`, `T = 1`,
//! `x₀ = 0`, `U(x) = −(x_T − 1)²`.
//!
//! Pushing upwards is free in the singular limit, so the value is the
//! expectation of the face-lifted payoff `ĝ(z) = −((z − 1)⁺)²`.

use std::sync::Arc;

use crate::model::{ModelSpec, TerminalFunctional};
use crate::quadrature::{adaptive_simpson, normal_pdf};

pub const T: f64 = 1.0;
pub const X0: f64 = 0.0;
pub const PEAK: f64 = 1.0;

pub fn model() -> ModelSpec {
    ModelSpec::constant("toy1d", vec![0.0], vec![1.0], vec![1.0]).expect("valid constant model")
}

pub fn payoff(x: f64) -> f64 {
    -(x - PEAK).powi(2)
}

pub fn terminal() -> TerminalFunctional {
    TerminalFunctional::markov("neg_sq", |x| payoff(x[0])).with_growth(1.0, 2.0)
}

/// `ĝ(z) = sup_{u ≥ 0} −(z + u − 1)²`.
pub fn lifted_payoff(z: f64) -> f64 {
    if z <= PEAK {
        0.0
    } else {
        -(z - PEAK).powi(2)
    }
}

/// `E[ĝ(x + √τ ξ)]`, `ξ ~ N(0,1)`, by adaptive Simpson to `tol`.
pub fn lifted_value(x: f64, tau: f64, tol: f64) -> f64 {
    if tau <= 0.0 {
        return lifted_payoff(x);
    }
    let s = tau.sqrt();
    // ĝ vanishes below the peak, so integrate ξ from the kink upwards.
    let lo = (PEAK - x) / s;
    let hi = lo.max(0.0) + 40.0;
    let f = |xi: f64| lifted_payoff(x + s * xi) * normal_pdf(xi);
    adaptive_simpson(&f, lo, hi, tol)
}

/// The singular-limit value at `(0, x₀)`.
pub fn oracle_value() -> f64 {
    lifted_value(X0, T, 1e-13)
}

/// `∂ₓ E[ĝ(x + √τ ξ)] = E[ĝ'(x + √τ ξ)]`.
pub fn lifted_value_dx(x: f64, tau: f64, tol: f64) -> f64 {
    let s = tau.sqrt();
    let lo = (PEAK - x) / s;
    let hi = lo.max(0.0) + 40.0;
    let f = |xi: f64| -2.0 * (x + s * xi - PEAK) * normal_pdf(xi);
    adaptive_simpson(&f, lo, hi, tol)
}

/// Spatial Lipschitz constant of `x ↦ E[ĝ(x + √τ ξ)]` on `[lo, hi]`.
/// The derivative `−2E[(x + √τξ − 1)⁺]` is monotone in `x`, so the bound
/// is attained at `hi`.
pub fn lifted_lipschitz(hi: f64, tau: f64) -> f64 {
    lifted_value_dx(hi, tau, 1e-12).abs()
}

pub type Payoff = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
