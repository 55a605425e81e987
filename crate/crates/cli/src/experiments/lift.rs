use std::sync::Arc;

use pathctrl_core::control::grid_dp::LevelRule;
use pathctrl_core::facelift::{facelift, facelift_equivalence_test, shift_property_test, AuxSpec, FaceliftSpec};
use pathctrl_core::model::transaction::{liquidation, transaction_constraint};
use pathctrl_core::model::{Dynamics, ModelSpec, TerminalFunctional};
use serde_json::json;

use super::{Context, Experiment};
use crate::error::Result;
use crate::report::{Check, Outcome, Table};

const VALUE_TOL: f64 = 1e-6;
const SEARCH_TOL: f64 = 1e-4;
/// Cost rate of the liquidation check; the transaction model's default.
const LIQUIDATION_LAMBDA: f64 = 0.1;
/// Stop the bound ladder once two doublings move `Y` by less than this.
const LADDER_TOL: f64 = 1e-3;
const SHIFTS: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

fn aux(ctx: &Context) -> AuxSpec {
    AuxSpec {
        state_box: ctx.toy_box(),
        n_space: ctx.space_points,
        quad_nodes: ctx.quad_nodes,
        levels: LevelRule::Uniform { step: ctx.level_step },
        start_bound: ctx.bound_ladder[0],
        max_doublings: ctx.bound_ladder.len() - 1,
        tol: LADDER_TOL,
    }
}

fn payoff_spec(ctx: &Context) -> Result<FaceliftSpec> {
    Ok(FaceliftSpec::from_terminal(
        &ctx.model.terminal,
        ctx.model.constraint.clone(),
        ctx.grid.t_end(),
    )?)
}

/// `sup_{u ≥ 0} −(z + u − c)²`.
fn lifted_toy(peak: f64) -> impl Fn(f64) -> f64 + Copy {
    move |z| if z <= peak { 0.0 } else { -(z - peak).powi(2) }
}

fn shifts() -> Vec<Vec<f64>> {
    SHIFTS.iter().map(|&s| vec![s]).collect()
}

pub struct Facelift;

impl Experiment for Facelift {
    fn name(&self) -> &'static str {
        "facelift"
    }
    fn summary(&self) -> &'static str {
        "face-lift values, liquidation fixed point, payoff/face-lift equivalence and the shift inequality"
    }
    fn anchor(&self) -> &'static str {
        "replacing the reward by its face-lift leaves the auxiliary value unchanged"
    }
    fn models(&self) -> &'static [&'static str] {
        &["toy1d"]
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let spec = payoff_spec(ctx)?;
        let oracle = lifted_toy(ctx.param("peak"));
        let mut table = Table::new(&["item", "x", "value", "reference", "error", "tolerance"]);
        let mut checks = Vec::new();
        for x in [0.0, 2.0] {
            let v = facelift(&spec, &[x])?.value;
            let err = (v - oracle(x)).abs();
            table.push(vec![
                json!("lifted_payoff"),
                json!(x),
                json!(v),
                json!(oracle(x)),
                json!(err),
                json!(VALUE_TOL),
            ]);
            checks.push(Check::new(format!("lifted_payoff_at_{x}"), err <= VALUE_TOL, format!("error {err:.2e}")));
        }

        let lam = LIQUIDATION_LAMBDA;
        let liq = FaceliftSpec::new(Arc::new(move |x: &[f64]| liquidation(x[0], x[1], lam)), transaction_constraint(lam), 1.0);
        let mut worst = 0.0f64;
        let mut unbounded = false;
        for i in 0..41 {
            for j in 0..41 {
                let (x, y) = (-2.0 + 0.1 * i as f64, -2.0 + 0.1 * j as f64);
                let v = facelift(&liq, &[x, y, 0.0])?;
                unbounded |= v.unbounded;
                worst = worst.max((v.value - liquidation(x, y, lam)).abs());
            }
        }
        table.push(vec![
            json!("liquidation_grid_41x41"),
            serde_json::Value::Null,
            json!(worst),
            json!(0.0),
            json!(worst),
            json!(SEARCH_TOL),
        ]);
        checks.push(Check::new(
            "liquidation_is_own_facelift",
            worst <= SEARCH_TOL && !unbounded,
            format!("max |lifted - liquidation| = {worst:.2e}"),
        ));

        let aux = aux(ctx);
        let eq = facelift_equivalence_test(ctx.dynamics(), &spec, ctx.grid, &ctx.model.x0, &aux)?;
        table.push(vec![
            json!("equivalence_gap"),
            json!(ctx.model.x0[0]),
            json!(eq.y_payoff),
            json!(eq.y_lifted),
            json!(eq.gap),
            json!(2.0 * eq.interpolation_tol),
        ]);
        checks.push(Check::new(
            "equivalence_within_2x_interpolation",
            eq.holds,
            format!("gap {:.3e} vs 2 x {:.3e}", eq.gap, eq.interpolation_tol),
        ));
        let (first, last) = (eq.gap_ladder[0].1, eq.gap_ladder.last().unwrap().1);
        checks.push(Check::new(
            "equivalence_gap_shrinks_with_bound",
            eq.gap_ladder.len() >= 3 && last < first,
            format!("gap ladder {:?}", eq.gap_ladder),
        ));

        let sh = shift_property_test(
            ctx.dynamics(),
            &ctx.model.terminal,
            &ctx.model.constraint,
            ctx.grid,
            &ctx.model.x0,
            &shifts(),
            &aux,
        )?;
        for e in &sh.entries {
            table.push(vec![
                json!("shift_slack"),
                json!(e.iota[0]),
                json!(e.y_shifted - e.delta),
                json!(sh.y),
                json!(e.slack),
                json!(sh.tolerance),
            ]);
        }
        checks.push(Check::new(
            "shift_inequality_holds",
            sh.holds,
            format!("min slack {:.3e}", min_slack(&sh)),
        ));
        Ok(Outcome {
            table,
            checks,
            summary: json!({ "equivalence": eq, "bound": eq.bound }),
        })
    }
}

fn min_slack(r: &pathctrl_core::facelift::ShiftReport) -> f64 {
    r.entries.iter().map(|e| e.slack).fold(f64::INFINITY, f64::min)
}

pub struct ShiftProperty;

impl Experiment for ShiftProperty {
    fn name(&self) -> &'static str {
        "shift_property"
    }
    fn summary(&self) -> &'static str {
        "auxiliary value at shifted starts, with the noise-free face-lifted case"
    }
    fn anchor(&self) -> &'static str {
        "shifting the start along the push directions at its support cost never raises the auxiliary value"
    }
    fn models(&self) -> &'static [&'static str] {
        &["toy1d"]
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let aux = aux(ctx);
        let mut table = Table::new(&["case", "x", "iota", "delta", "y", "y_shifted", "slack", "tolerance"]);
        let mut checks = Vec::new();
        let x0 = ctx.model.x0.clone();
        let sh = shift_property_test(ctx.dynamics(), &ctx.model.terminal, &ctx.model.constraint, ctx.grid, &x0, &shifts(), &aux)?;
        for e in &sh.entries {
            table.push(vec![
                json!("model"),
                json!(x0[0]),
                json!(e.iota[0]),
                json!(e.delta),
                json!(sh.y),
                json!(e.y_shifted),
                json!(e.slack),
                json!(sh.tolerance),
            ]);
        }
        checks.push(Check::new(
            "inequality_within_dp_tolerance",
            sh.holds,
            format!("min slack {:.3e}", min_slack(&sh)),
        ));
        checks.push(Check::new(
            "zero_shift_is_equality",
            sh.entries[0].slack == 0.0,
            format!("slack {}", sh.entries[0].slack),
        ));

        // Noise-free dynamics with an already lifted reward: exact recursion.
        let frozen: Arc<dyn Dynamics> = Arc::new(ModelSpec::constant("frozen", vec![ctx.param("mu")], vec![0.0], vec![1.0])?);
        let g = lifted_toy(ctx.param("peak"));
        let lifted = TerminalFunctional::markov("lifted", move |x| g(x[0]));
        let mut exact = true;
        for dx in [0.0, 0.8, 1.5] {
            let x = vec![x0[0] + dx];
            let r = shift_property_test(frozen.clone(), &lifted, &ctx.model.constraint, ctx.grid, &x, &shifts()[1..], &aux)?;
            for e in &r.entries {
                exact &= e.slack >= 0.0;
                table.push(vec![
                    json!("noise_free_lifted"),
                    json!(x[0]),
                    json!(e.iota[0]),
                    json!(e.delta),
                    json!(r.y),
                    json!(e.y_shifted),
                    json!(e.slack),
                    json!(0.0),
                ]);
            }
        }
        checks.push(Check::new("noise_free_inequality_exact", exact, "slack >= 0 without tolerance"));
        Ok(Outcome {
            table,
            checks,
            summary: json!({ "bound": sh.entries.first().map(|_| aux.start_bound * 2f64.powi(aux.max_doublings as i32)) }),
        })
    }
}
