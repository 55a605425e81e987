use pathctrl_core::linalg;
use pathctrl_core::model::transaction::{liquidation, transaction_constraint};
use pathctrl_core::model::{in_constraint_cone, perturbed_sigma, rho, support_function, ConstraintSet, ModelSpec, PerturbedModel};
use pathctrl_core::pathspace::{concat, d_infinity, interpolate, sup_norm};
use pathctrl_core::{Path, TimeGrid};
use serde_json::json;

use super::{Context, Experiment};
use crate::error::Result;
use crate::report::{Check, Outcome, Table};

/// Tolerance for examples whose reference is itself a rounded decimal.
const ROUNDING: f64 = 1e-15;

struct Cases {
    table: Table,
    checks: Vec<Check>,
}

impl Cases {
    fn scalar(&mut self, name: &str, got: f64, expected: f64, tol: f64) {
        let passed = if tol == 0.0 { got == expected } else { (got - expected).abs() <= tol };
        self.table.push(vec![json!(name), json!(got), json!(expected), json!(tol), json!(passed)]);
        self.checks.push(Check::new(name, passed, format!("got {got:e}, expected {expected:e}")));
    }

    fn flag(&mut self, name: &str, got: bool, expected: bool) {
        let passed = got == expected;
        self.table.push(vec![json!(name), json!(got), json!(expected), json!(0.0), json!(passed)]);
        self.checks.push(Check::new(name, passed, format!("got {got}, expected {expected}")));
    }
}

fn grid(n: usize) -> Result<TimeGrid> {
    Ok(TimeGrid::new(0.0, 1.0, n)?)
}

pub struct UnitExactness;

impl Experiment for UnitExactness {
    fn name(&self) -> &'static str {
        "unit_exactness"
    }
    fn summary(&self) -> &'static str {
        "closed-form examples of the penalty, cone, support function, liquidation and path operations"
    }
    fn anchor(&self) -> &'static str {
        "positive-part penalty, constraint cone, support function, liquidation value and path-space operations"
    }

    fn run(&self, _ctx: &Context) -> Result<Outcome> {
        let mut c = Cases {
            table: Table::new(&["example", "got", "expected", "tolerance", "passed"]),
            checks: Vec::new(),
        };

        c.scalar("rho(1,-2)", rho(&[1.0, -2.0]), 1.0, 0.0);
        c.scalar("rho(0)", rho(&[0.0, 0.0]), 0.0, 0.0);
        c.scalar("rho(2,3,-1)", rho(&[2.0, 3.0, -1.0]), 5.0, 0.0);

        let id = ConstraintSet::constant(2, linalg::identity(2))?;
        let tx = transaction_constraint(0.1);
        c.flag("cone_identity(-1,-2)", in_constraint_cone(&[-1.0, -2.0], 0.0, &id), true);
        c.flag("cone_identity(0.1,-1)", in_constraint_cone(&[0.1, -1.0], 0.0, &id), false);
        c.flag("cone_transaction(1,1,0)", in_constraint_cone(&[1.0, 1.0, 0.0], 0.0, &tx), true);

        c.scalar("delta_identity(0,0)", support_function(&[0.0, 0.0], 0.0, &id), 0.0, 0.0);
        c.scalar("delta_identity(1,2)", support_function(&[1.0, 2.0], 0.0, &id), 0.0, 0.0);
        c.flag(
            "delta_identity(-1,0)_infinite",
            support_function(&[-1.0, 0.0], 0.0, &id) == f64::INFINITY,
            true,
        );

        c.scalar("liquidation(1,1)", liquidation(1.0, 1.0, 0.1), 1.0 + 1.0 / 1.1, ROUNDING);
        c.scalar("liquidation(1,-1)", liquidation(1.0, -1.0, 0.1), -0.1, ROUNDING);

        let g4 = grid(4)?;
        let zero = Path::constant(g4, &[0.0])?;
        let wiggle = Path::from_nodes(g4, &[vec![0.0], vec![1.0], vec![-2.0], vec![0.5], vec![3.0]])?;
        c.scalar("d_inf_identical", d_infinity(0.5, &wiggle, 0.5, &wiggle), 0.0, 0.0);
        c.scalar("d_inf_time_only", d_infinity(0.0, &zero, 0.04, &zero), 0.2, ROUNDING);

        let g1 = grid(1)?;
        let two = interpolate(&[vec![1.0], vec![4.0]], g1)?;
        c.scalar("interpolate_midpoint", two.eval(0.5)[0], 2.5, 0.0);
        let flat = interpolate(&vec![vec![3.0]; 5], g4)?;
        c.scalar("interpolate_constant", flat.eval(0.3)[0], 3.0, 0.0);
        let tent = interpolate(&[vec![0.0], vec![1.0], vec![0.0]], grid(2)?)?;
        c.scalar("interpolate_tent_at_quarter", tent.eval(0.25)[0], 0.5, 0.0);

        let cx = Path::constant(g4, &[2.0])?;
        let cy = Path::constant(g4, &[-5.0])?;
        let joined = concat(&cx, &cy, 0.5)?;
        c.flag("concat_constants", (0..5).all(|k| joined.node(k)[0] == 2.0), true);
        let at_end = concat(&wiggle, &cy, 1.0)?;
        c.scalar("concat_at_terminal_time", at_end.terminal()[0], wiggle.terminal()[0], 0.0);
        let ramp = interpolate(&[vec![0.0], vec![0.5], vec![1.0]], grid(2)?)?;
        let steep = interpolate(&[vec![0.0], vec![1.0], vec![2.0]], grid(2)?)?;
        c.scalar("concat_ramp_then_steep", concat(&ramp, &steep, 0.5)?.terminal()[0], 1.5, 0.0);

        c.scalar("sup_norm_zero", sup_norm(&zero, 1.0), 0.0, 0.0);
        let pair = Path::from_nodes(g1, &[vec![1.0, 0.0], vec![0.0, -3.0]])?;
        c.scalar("sup_norm_two_nodes", sup_norm(&pair, 1.0), 3.0, 0.0);

        let base = ModelSpec::constant("still", vec![0.0, 0.0], vec![0.0; 4], linalg::identity(2))?;
        let pm = PerturbedModel::new(base, |_| -1.0, |_, out| out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]), 1.0)?;
        let still = Path::constant(g1, &[0.3, -0.7])?;
        let s = perturbed_sigma(&pm, &still.history(0))?;
        c.flag("perturbed_zero_sigma_is_minus_identity", s.as_slice() == [-1.0, 0.0, 0.0, -1.0], true);
        let base = ModelSpec::constant("diag", vec![0.0, 0.0], vec![2.0, 0.5, 0.0, 3.0], linalg::identity(2))?;
        let pm = PerturbedModel::new(base, |_| 0.0, |_, out| out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]), 1.0)?;
        let s = perturbed_sigma(&pm, &still.history(0))?;
        // Column-major storage of the row-major [[2, 0.5], [0, 3]].
        c.flag("perturbed_zero_eta_keeps_sigma", s.as_slice() == [2.0, 0.0, 0.5, 3.0], true);

        Ok(Outcome {
            table: c.table,
            checks: c.checks,
            summary: json!({}),
        })
    }
}
