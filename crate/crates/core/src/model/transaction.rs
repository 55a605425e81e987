//! Portfolio with proportional transaction costs.
//!
//! State: `x¹` cash, `x²` money in the risky asset, `x³` the factor
//! Brownian motion driving the (possibly path-dependent) market
//! coefficients `r`, `m`, `Σ`. Control `ν¹` sells the risky asset, `ν²`
//! buys it; each move pays the cost `λ`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, ModelSpec, PerturbedModel, ScalarFn, TerminalFunctional};
use crate::pathspace::History;

pub const DIM: usize = 3;

/// Liquidation value `x + y⁺/(1+λ) − (1+λ)y⁻`.
pub fn liquidation(x: f64, y: f64, lambda: f64) -> f64 {
    x + y.max(0.0) / (1.0 + lambda) - (1.0 + lambda) * (-y).max(0.0)
}

pub fn push_matrix(lambda: f64) -> [f64; 9] {
    let c = -(1.0 + lambda);
    [1.0, c, 0.0, c, 1.0, 0.0, 0.0, 0.0, 0.0]
}

pub const M_MATRIX: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];

pub fn transaction_constraint(lambda: f64) -> ConstraintSet {
    let f = push_matrix(lambda);
    ConstraintSet::new(DIM, move |_, out| out.copy_from_slice(&f))
}

/// Utility `𝒰(x³, w)` applied to the factor history and liquidated wealth.
pub type Utility = Arc<dyn Fn(&History<'_>, f64) -> f64 + Send + Sync>;

pub fn exponential_utility() -> Utility {
    Arc::new(|_, w| -(-w).exp())
}

/// Market coefficient presets, all functionals of the factor path `x³`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Constant,
    /// Volatility modulated by the running maximum of the factor:
    /// `Σ_t = Σ₀(1 + ¼ tanh(max_{s≤t} x³_s))`.
    RunningMax,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "constant" => Ok(Preset::Constant),
            "running_max" => Ok(Preset::RunningMax),
            other => Err(Error::invalid("preset", format!("unknown preset `{other}` (constant, running_max)"))),
        }
    }

    pub fn coefficients(self, r: f64, m: f64, sigma: f64) -> (ScalarFn, ScalarFn, ScalarFn) {
        let r_fn: ScalarFn = Arc::new(move |_| r);
        let m_fn: ScalarFn = Arc::new(move |_| m);
        let s_fn: ScalarFn = match self {
            Preset::Constant => Arc::new(move |_| sigma),
            Preset::RunningMax => Arc::new(move |h| sigma * (1.0 + 0.25 * h.running_max(2).tanh())),
        };
        (r_fn, m_fn, s_fn)
    }
}

#[derive(Clone)]
pub struct TransactionModel {
    pub lambda: f64,
    pub model: PerturbedModel,
    pub terminal: TerminalFunctional,
}

/// Builds the perturbed (`η^p = −1/p`, `M = diag(1,1,0)`) transaction model
/// and its terminal functional `𝒰(x³, ℓ(x¹_T, x²_T))`.
pub fn build_transaction_model(
    lambda: f64,
    r_fn: ScalarFn,
    m_fn: ScalarFn,
    sigma_fn: ScalarFn,
    p: f64,
    utility: Utility,
) -> Result<TransactionModel> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda", format!("transaction cost must be ≥ 0, got {lambda}")));
    }
    if !(p > 0.0) {
        return Err(Error::invalid("p", format!("perturbation index must be positive, got {p}")));
    }
    let f = push_matrix(lambda);
    let (r1, m1, s1) = (r_fn.clone(), m_fn.clone(), sigma_fn.clone());
    let s_inv = sigma_fn.clone();
    let base = ModelSpec::new(
        "transaction",
        DIM,
        move |h, out| {
            let x = h.current();
            out[0] = r1(h) * x[0];
            out[1] = m1(h) * x[1];
            out[2] = 0.0;
        },
        move |h, out| {
            out.fill(0.0);
            out[5] = s1(h) * h.current()[1];
            out[8] = 1.0;
        },
        move |_, out| out.copy_from_slice(&f),
    )
    .with_lipschitz(1.0 + lambda + 2.0);
    let model = PerturbedModel::new(base, move |_| -1.0 / p, |_, out| out.copy_from_slice(&M_MATRIX), p)?.with_vol_inverse(move |h, out| {
        out.fill(0.0);
        out[0] = -p;
        out[4] = -p;
        out[5] = p * s_inv(h) * h.current()[1];
        out[8] = 1.0;
    });
    let terminal = TerminalFunctional::path("liquidation_utility", move |h| {
        let x = h.current();
        utility(h, liquidation(x[0], x[1], lambda))
    })
    .with_growth(1.0, 1.0 + lambda);
    Ok(TransactionModel { lambda, model, terminal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::model::{perturbed_sigma, perturbed_sigma_inverse, Dynamics};
    use crate::pathspace::{Path, TimeGrid};

    fn constant_model(p: f64) -> TransactionModel {
        let (r, m, s) = Preset::Constant.coefficients(0.01, 0.05, 0.2);
        build_transaction_model(0.1, r, m, s, p, exponential_utility()).unwrap()
    }

    #[test]
    fn liquidation_examples() {
        assert!((liquidation(1.0, 1.0, 0.1) - (1.0 + 1.0 / 1.1)).abs() < 1e-15);
        assert!((liquidation(1.0, -1.0, 0.1) - (-0.1)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        let (r, m, s) = Preset::Constant.coefficients(0.0, 0.0, 0.2);
        assert!(build_transaction_model(-0.1, r.clone(), m.clone(), s.clone(), 1.0, exponential_utility()).is_err());
        assert!(build_transaction_model(0.1, r, m, s, 0.0, exponential_utility()).is_err());
    }

    #[test]
    fn closed_form_inverse_matches_numeric() {
        let tm = constant_model(4.0);
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let path = Path::constant(grid, &[1.0, 0.7, -0.3]).unwrap();
        let h = path.history(1);
        let s = perturbed_sigma(&tm.model, &h).unwrap();
        let inv = perturbed_sigma_inverse(&tm.model, &h).unwrap();
        let prod = s * inv;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn inverse_times_push_is_minus_p_f() {
        let tm = constant_model(8.0);
        let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let path = Path::constant(grid, &[0.2, 1.5, 0.4]).unwrap();
        let mut inv = [0.0; 9];
        assert!(tm.model.vol_inverse(&path.history(0), &mut inv));
        let prod = linalg::matmul(&inv, &push_matrix(0.1), 3);
        for (a, b) in prod.iter().zip(push_matrix(0.1)) {
            assert_eq!(*a, -8.0 * b);
        }
    }

    #[test]
    fn running_max_preset_reads_factor_history() {
        let (_, _, s) = Preset::RunningMax.coefficients(0.0, 0.0, 0.2);
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let p = Path::from_flat(grid, 3, vec![0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, -1.0]).unwrap();
        let v = s(&p.history(2));
        assert!((v - 0.2 * (1.0 + 0.25 * 2f64.tanh())).abs() < 1e-15);
    }
}
