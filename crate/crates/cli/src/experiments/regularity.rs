use pathctrl_core::benchmark;
use pathctrl_core::control::{calibrated_bounds, regularity_probe, solve_grid_dp, LiftedOracleField, RegularityProbe, ValueField};
use serde_json::json;

use super::{Context, Defaults, Experiment};
use crate::error::{CliError, Result};
use crate::report::{Check, Outcome, Table};

const H_LIST: [f64; 3] = [0.05, 0.1, 0.2];
const TAU_LIST: [f64; 3] = [0.01, 0.04, 0.16];
const LIPSCHITZ_SLACK: f64 = 1.2;
const HOLDER_RANGE: (f64, f64) = (0.4, 0.6);
const CALIBRATION_SAFETY: f64 = 1.5;

pub struct Regularity;

impl Experiment for Regularity {
    fn name(&self) -> &'static str {
        "regularity"
    }
    fn summary(&self) -> &'static str {
        "spatial difference ratios and the time modulus of the grid-DP and singular-limit value fields"
    }
    fn anchor(&self) -> &'static str {
        "the value is Lipschitz in space and half-Hölder in time"
    }
    fn models(&self) -> &'static [&'static str] {
        &["toy1d"]
    }
    fn defaults(&self) -> Defaults {
        Defaults {
            n_steps: 50,
            penalty_ladder: vec![16.0],
            space_points: 201,
            ..Defaults::default()
        }
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let reference = [("x0", benchmark::X0), ("mu", 0.0), ("sigma", 1.0), ("peak", benchmark::PEAK)];
        if reference.iter().any(|(k, v)| ctx.param(k) != *v) || ctx.grid.t_start() != 0.0 || ctx.grid.t_end() != benchmark::T {
            return Err(CliError::config(
                "model.params",
                "the singular-limit field is known in closed form only for the default toy1d on [0, 1]",
            ));
        }
        let n = *ctx.penalty_ladder.last().unwrap();
        let dp = solve_grid_dp(ctx.dynamics(), &ctx.model.terminal, n, &ctx.dp_spec(n)?, ctx.grid, &ctx.model.x0)?;
        let oracle = LiftedOracleField { tol: 1e-10 };
        let probe = RegularityProbe {
            t: 0.0,
            x: ctx.model.x0.clone(),
            axis: 0,
            mu: 0.0,
            sigma: 1.0,
            h_list: H_LIST.to_vec(),
            tau_list: TAU_LIST.to_vec(),
            panels: 200,
        };
        let lip = benchmark::lifted_lipschitz(ctx.model.x0[0] + H_LIST[2], benchmark::T);
        let mut table = Table::new(&["field", "kind", "step", "value"]);
        let mut checks = Vec::new();
        let fields: [(&str, &dyn ValueField); 2] = [("grid_dp", &dp), ("singular_limit", &oracle)];
        for (name, field) in fields {
            let r = regularity_probe(field, &probe)?;
            for s in &r.space {
                table.push(vec![json!(name), json!("space_ratio"), json!(s.h), json!(s.ratio)]);
            }
            for t in &r.time {
                table.push(vec![json!(name), json!("time_l1_modulus"), json!(t.tau), json!(t.l1_modulus)]);
                table.push(vec![json!(name), json!("time_mean_shift"), json!(t.tau), json!(t.mean_shift)]);
            }
            table.push(vec![
                json!(name),
                json!("holder_exponent"),
                serde_json::Value::Null,
                json!(r.holder_exponent),
            ]);
            checks.push(Check::new(
                format!("{name}_space_ratios_bounded"),
                r.max_ratio <= LIPSCHITZ_SLACK * lip,
                format!("max ratio {:.4} vs {LIPSCHITZ_SLACK} x {lip:.4}", r.max_ratio),
            ));
            checks.push(Check::new(
                format!("{name}_holder_exponent"),
                (HOLDER_RANGE.0..=HOLDER_RANGE.1).contains(&r.holder_exponent),
                format!("fitted {:.4}", r.holder_exponent),
            ));
        }

        let pilot: Vec<(f64, Vec<f64>)> = (0..8).map(|i| (0.1 * i as f64, vec![-1.0 + 0.3 * i as f64])).collect();
        let fresh: Vec<(f64, Vec<f64>)> = (0..8).map(|i| (0.05 + 0.1 * i as f64, vec![-0.85 + 0.3 * i as f64])).collect();
        let b = calibrated_bounds(&dp, &pilot, &fresh, 0.05, 0.04, CALIBRATION_SAFETY);
        checks.push(Check::new(
            "calibrated_constants_hold_on_fresh_points",
            b.holds,
            format!(
                "space {:.3} <= {:.3}, time {:.3} <= {:.3}",
                b.fresh_space, b.c_space, b.fresh_time, b.c_time
            ),
        ));
        Ok(Outcome {
            table,
            checks,
            summary: json!({ "lipschitz_oracle": lip, "n": n, "calibrated": b }),
        })
    }
}
