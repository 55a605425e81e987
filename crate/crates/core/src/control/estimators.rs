use std::sync::Arc;

use super::grid_dp::{solve_grid_dp, GridDpSpec};
use super::{Method, ValueEstimate};
use crate::bsde::{solve_with, BasisSpec, DEFAULT_SCHEME};
use crate::error::{Error, Result};
use crate::model::{Dynamics, TerminalFunctional};
use crate::pathspace::TimeGrid;
use crate::simulate::{simulate_forward, simulate_terminal, ControlSpec, SimulationPlan};
use crate::stats;

/// `E[U(X)]` under the plan's control. Weak plans average `w·U`.
pub fn estimate_value_mc(model: &dyn Dynamics, terminal: &TerminalFunctional, plan: &SimulationPlan) -> Result<ValueEstimate> {
    let out = simulate_terminal(model, terminal, plan)?;
    let vals: Vec<f64> = if plan.weak_mode {
        out.iter().map(|(u, lw)| u * lw.exp()).collect()
    } else {
        out.iter().map(|p| p.0).collect()
    };
    let m = stats::mean_se(&vals);
    Ok(ValueEstimate {
        value: m.mean,
        se: m.se,
        method: Method::MonteCarlo,
        meta: serde_json::json!({ "n_paths": plan.n_paths, "seed": plan.seed, "weak": plan.weak_mode }),
    })
}

/// Everything an estimator needs to value `v^n(0, x0)`.
#[derive(Clone)]
pub struct ValueProblem<'a> {
    pub model: Arc<dyn Dynamics>,
    pub terminal: &'a TerminalFunctional,
    pub x0: &'a [f64],
    pub grid: TimeGrid,
    pub n_bound: f64,
}

pub trait ValueEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn estimate(&self, problem: &ValueProblem<'_>) -> Result<ValueEstimate>;
}

pub struct GridDpEstimator {
    pub spec: GridDpSpec,
}

impl ValueEstimator for GridDpEstimator {
    fn name(&self) -> &'static str {
        "grid_dp"
    }

    fn estimate(&self, p: &ValueProblem<'_>) -> Result<ValueEstimate> {
        Ok(solve_grid_dp(p.model.clone(), p.terminal, p.n_bound, &self.spec, p.grid, p.x0)?.estimate)
    }
}

/// Best constant control among `candidates`: chosen on a pilot sample, then
/// valued on an independent sample, so the reported value is an unbiased
/// estimate of an admissible policy (a lower bound for `v^n`).
pub struct McPolicySearch {
    pub candidates: Vec<Vec<f64>>,
    pub n_pilot: usize,
    pub n_paths: usize,
    pub pilot_seed: u64,
    pub seed: u64,
}

impl ValueEstimator for McPolicySearch {
    fn name(&self) -> &'static str {
        "mc_policy_search"
    }

    fn estimate(&self, p: &ValueProblem<'_>) -> Result<ValueEstimate> {
        let admissible: Vec<&Vec<f64>> = self
            .candidates
            .iter()
            .filter(|c| c.iter().all(|&v| (0.0..=p.n_bound + 1e-12).contains(&v)))
            .collect();
        if admissible.is_empty() {
            return Err(Error::invalid("candidates", "no candidate control lies in [0, n]^d"));
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in admissible.iter().enumerate() {
            let plan =
                SimulationPlan::new(p.grid, self.n_pilot, self.pilot_seed, p.x0.to_vec()).with_control(ControlSpec::constant(c.to_vec(), p.n_bound)?);
            let v = estimate_value_mc(p.model.as_ref(), p.terminal, &plan)?.value;
            if v > best.1 {
                best = (i, v);
            }
        }
        let chosen = admissible[best.0].clone();
        let plan =
            SimulationPlan::new(p.grid, self.n_paths, self.seed, p.x0.to_vec()).with_control(ControlSpec::constant(chosen.clone(), p.n_bound)?);
        let mut est = estimate_value_mc(p.model.as_ref(), p.terminal, &plan)?;
        est.method = Method::PolicySearch;
        est.meta = serde_json::json!({ "control": chosen, "n_paths": self.n_paths, "candidates": admissible.len() });
        Ok(est)
    }
}

/// `Y₀` of the penalized BSDE at `n = n_bound` on a fresh uncontrolled
/// ensemble.
pub struct BsdeEstimator {
    pub basis: BasisSpec,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: String,
}

impl BsdeEstimator {
    pub fn new(basis: BasisSpec, n_paths: usize, seed: u64) -> Self {
        Self {
            basis,
            n_paths,
            seed,
            scheme: DEFAULT_SCHEME.to_string(),
        }
    }
}

impl ValueEstimator for BsdeEstimator {
    fn name(&self) -> &'static str {
        "bsde"
    }

    fn estimate(&self, p: &ValueProblem<'_>) -> Result<ValueEstimate> {
        let plan = SimulationPlan::new(p.grid, self.n_paths, self.seed, p.x0.to_vec());
        let ens = simulate_forward(p.model.as_ref(), &plan)?;
        let sol = solve_with(&self.scheme, p.model.as_ref(), p.terminal, p.n_bound, &ens, &self.basis)?;
        Ok(ValueEstimate {
            value: sol.y0.mean,
            se: sol.y0.se,
            method: Method::Bsde,
            meta: sol.summary(),
        })
    }
}
