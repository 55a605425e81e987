use std::sync::Arc;

use serde::Serialize;

use super::estimators::{ValueEstimator, ValueProblem};
use super::grid_dp::{compose_head, solve_grid_dp, GridDpSpec, SpaceGrid};
use super::ValueEstimate;
use crate::error::{Error, Result};
use crate::model::{Dynamics, PerturbedModel, TerminalFunctional};
use crate::pathspace::TimeGrid;
use crate::simulate::{simulate_forward, simulate_terminal, SimulationPlan};
use crate::stats::{self, MeanSe};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppReport {
    pub s: f64,
    pub v_full: f64,
    pub v_composed: f64,
    pub residual: f64,
    /// Full solve on the refined grid (`2N − 1` points per axis).
    pub v_fine: f64,
    /// `(4/3)|v_N − v_{2N−1}|`, the interpolation error of `v_N` for a
    /// second-order scheme.
    pub richardson_error: f64,
    pub residual_fine: f64,
    /// `log₂(residual / residual_fine)`.
    pub order: f64,
}

impl DppReport {
    pub fn within(&self, factor: f64) -> bool {
        self.residual <= factor * self.richardson_error
    }
}

/// Grid whose points are the midpoints of `space`.
fn staggered(space: &SpaceGrid, state_box: &[(f64, f64)]) -> SpaceGrid {
    let b: Vec<(f64, f64)> = state_box
        .iter()
        .zip(space.spacing())
        .map(|(&(lo, hi), h)| (lo + 0.5 * h, hi - 0.5 * h))
        .collect();
    SpaceGrid::new(&b, space.n_per_dim() - 1)
}

/// Compares `v(0, x0)` with `sup E[v(s, X_s)]` where the outer supremum is
/// a head recursion on the staggered grid reading the tail table at `s`.
/// A residual well inside the interpolation error means the tables satisfy
/// the dynamic programming principle up to discretisation.
pub fn dpp_residual(
    model: Arc<dyn Dynamics>,
    terminal: &TerminalFunctional,
    n_bound: f64,
    spec: &GridDpSpec,
    grid: TimeGrid,
    x0: &[f64],
    s_node: usize,
) -> Result<DppReport> {
    if s_node == 0 || s_node >= grid.n_steps() {
        return Err(Error::invalid("s", format!("intermediate node must lie in 1..{}", grid.n_steps())));
    }
    let coarse = solve_grid_dp(model.clone(), terminal, n_bound, spec, grid, x0)?;
    let fine_spec = spec.clone().with_n_space(2 * spec.n_space - 1);
    let fine = solve_grid_dp(model, terminal, n_bound, &fine_spec, grid, x0)?;
    let residual_of = |sol: &super::DpSolution| {
        let head = staggered(&sol.space, &spec.state_box);
        (sol.value() - compose_head(sol, s_node, &head, x0)).abs()
    };
    let v_composed = {
        let head = staggered(&coarse.space, &spec.state_box);
        compose_head(&coarse, s_node, &head, x0)
    };
    let residual = (coarse.value() - v_composed).abs();
    let residual_fine = residual_of(&fine);
    Ok(DppReport {
        s: grid.node(s_node),
        v_full: coarse.value(),
        v_composed,
        residual,
        v_fine: fine.value(),
        richardson_error: 4.0 / 3.0 * (coarse.value() - fine.value()).abs(),
        residual_fine,
        order: (residual / residual_fine).log2(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexOrderReport {
    pub p: f64,
    pub q: f64,
    pub value_p: MeanSe,
    pub value_q: MeanSe,
    /// Paired `U(X^q) − U(X^p)` on common noise.
    pub diff: MeanSe,
    /// `diff.mean ≥ −3·diff.se`.
    pub holds: bool,
    /// Bitwise identical terminal samples.
    pub identical: bool,
}

/// Checks `η^p ≤ η^q ≤ 0` on the nodes of `n_check` simulated histories.
fn check_eta_order(mp: &PerturbedModel, mq: &PerturbedModel, plan: &SimulationPlan, n_check: usize) -> Result<()> {
    let probe = SimulationPlan {
        n_paths: n_check.min(plan.n_paths).max(1),
        ..plan.clone()
    };
    let ens = simulate_forward(mp, &probe)?;
    for j in 0..ens.n_paths() {
        for k in 0..ens.grid().n_nodes() {
            let h = ens.history(j, k);
            let (ep, eq) = (mp.eta(&h), mq.eta(&h));
            if !(ep <= eq && eq <= 0.0) {
                return Err(Error::Precondition(format!(
                    "need η^p ≤ η^q ≤ 0, found η^p = {ep}, η^q = {eq} at t = {}",
                    h.time()
                )));
            }
        }
    }
    Ok(())
}

/// For concave `U` and `η^p ≤ η^q ≤ 0`, more noise cannot help:
/// `E[U(X^p)] ≤ E[U(X^q)]` under a shared bounded control. Both arms use
/// the same seed, so the comparison is paired.
pub fn convex_order_experiment(
    model_p: &PerturbedModel,
    model_q: &PerturbedModel,
    terminal: &TerminalFunctional,
    plan: &SimulationPlan,
) -> Result<ConvexOrderReport> {
    check_eta_order(model_p, model_q, plan, 64)?;
    let a = simulate_terminal(model_p, terminal, plan)?;
    let b = simulate_terminal(model_q, terminal, plan)?;
    let up: Vec<f64> = a.iter().map(|x| x.0).collect();
    let uq: Vec<f64> = b.iter().map(|x| x.0).collect();
    let d: Vec<f64> = uq.iter().zip(&up).map(|(q, p)| q - p).collect();
    let diff = stats::mean_se(&d);
    Ok(ConvexOrderReport {
        p: model_p.p(),
        q: model_q.p(),
        value_p: stats::mean_se(&up),
        value_q: stats::mean_se(&uq),
        holds: diff.mean >= -3.0 * diff.se,
        identical: up.iter().zip(&uq).all(|(x, y)| x.to_bits() == y.to_bits()),
        diff,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegenerateLevel {
    pub p: f64,
    pub estimate: ValueEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegenerateLadderReport {
    pub estimator: String,
    pub levels: Vec<DegenerateLevel>,
    /// `v^{p_{i+1}} − v^{p_i}`.
    pub gaps: Vec<f64>,
    /// Indices where the value drops by more than `3·SE`.
    pub violations: Vec<usize>,
    /// Indices `i` with `|gap_{i+1}| > |gap_i| + 3·SE`.
    pub growing_gaps: Vec<usize>,
}

impl DegenerateLadderReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty() && self.growing_gaps.is_empty()
    }
}

pub type PerturbedBuilder<'a> = dyn Fn(f64) -> Result<(Arc<dyn Dynamics>, TerminalFunctional)> + 'a;

/// Values `v^{p,n}` along increasing `p` with one estimator. As the added
/// noise vanishes the values should increase towards the degenerate
/// supremum with shrinking gaps.
pub fn degenerate_sup_ladder(
    build: &PerturbedBuilder<'_>,
    p_list: &[f64],
    estimator: &dyn ValueEstimator,
    x0: &[f64],
    grid: TimeGrid,
    n_bound: f64,
) -> Result<DegenerateLadderReport> {
    if p_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("p_list", "perturbation indices must be strictly increasing"));
    }
    let mut levels = Vec::with_capacity(p_list.len());
    for &p in p_list {
        let (model, terminal) = build(p)?;
        let est = estimator.estimate(&ValueProblem {
            model,
            terminal: &terminal,
            x0,
            grid,
            n_bound,
        })?;
        levels.push(DegenerateLevel { p, estimate: est });
    }
    let se = |i: usize| levels[i].estimate.se;
    let gaps: Vec<f64> = levels.windows(2).map(|w| w[1].estimate.value - w[0].estimate.value).collect();
    let violations = (0..gaps.len()).filter(|&i| gaps[i] < -3.0 * se(i).hypot(se(i + 1))).collect();
    let growing_gaps = (0..gaps.len().saturating_sub(1))
        .filter(|&i| gaps[i + 1].abs() > gaps[i].abs() + 3.0 * se(i + 1).hypot(se(i + 2)))
        .collect();
    Ok(DegenerateLadderReport {
        estimator: estimator.name().to_string(),
        levels,
        gaps,
        violations,
        growing_gaps,
    })
}
