use pathctrl_core::simulate::{
    calibrate_moment_constants, girsanov_weights, moment_diagnostics, simulate_forward, weak_strong_agreement, ControlSpec, SimulationPlan,
};
use pathctrl_core::stats;
use serde_json::json;

use super::{Context, Defaults, Experiment};
use crate::error::Result;
use crate::report::{Check, Outcome, Table};

/// Bound of the fixed controls used by the simulation experiments.
const CONTROL_BOUND: f64 = 2.0;

fn plan(ctx: &Context, seed: u64) -> SimulationPlan {
    SimulationPlan::new(ctx.grid, ctx.paths, seed, ctx.model.x0.clone())
}

/// `ν_i = n·1{x_i < x0_i + 1}`: pushes until one unit above the start.
fn threshold_feedback(ctx: &Context) -> Result<ControlSpec> {
    let x0 = ctx.model.x0.clone();
    Ok(ControlSpec::feedback(x0.len(), CONTROL_BOUND, move |_, h, out| {
        for ((o, x), s) in out.iter_mut().zip(h.current()).zip(&x0) {
            *o = if *x < s + 1.0 { CONTROL_BOUND } else { 0.0 };
        }
    })?)
}

pub struct Simulate;

impl Experiment for Simulate {
    fn name(&self) -> &'static str {
        "simulate"
    }
    fn summary(&self) -> &'static str {
        "controlled Euler ensemble: node moments, moment bounds on fresh seeds, Girsanov weight mean"
    }
    fn anchor(&self) -> &'static str {
        "moment bounds of the controlled state and the unit-mean stochastic exponential"
    }
    fn defaults(&self) -> Defaults {
        Defaults {
            n_steps: 50,
            ..Defaults::default()
        }
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let d = ctx.model.x0.len();
        let ctrl = ControlSpec::constant(vec![0.5 * CONTROL_BOUND; d], CONTROL_BOUND)?;
        let model = ctx.dynamics();
        let ens = simulate_forward(model.as_ref(), &plan(ctx, ctx.seed).with_control(ctrl.clone()))?;

        let mut table = Table::new(&["k", "t", "coord", "mean", "sd"]);
        for k in 0..ens.grid().n_nodes() {
            for i in 0..d {
                let v: Vec<f64> = (0..ens.n_paths()).map(|j| ens.node(j, k)[i]).collect();
                let m = stats::mean_se(&v);
                table.push(vec![json!(k), json!(ens.grid().node(k)), json!(i + 1), json!(m.mean), json!(m.std())]);
            }
        }

        let pilot = moment_diagnostics(&ens, None);
        let constants = calibrate_moment_constants(&pilot, 1.5);
        let mut checks = Vec::new();
        for s in 1..=ctx.replicates as u64 {
            let fresh = simulate_forward(model.as_ref(), &plan(ctx, ctx.seed + s).with_control(ctrl.clone()))?;
            let rep = moment_diagnostics(&fresh, Some(&constants));
            checks.push(Check::new(
                format!("moment_bounds_seed_{}", ctx.seed + s),
                rep.violations.is_empty(),
                if rep.violations.is_empty() {
                    "pilot constants hold".to_string()
                } else {
                    rep.violations.join("; ")
                },
            ));
        }

        let logw = girsanov_weights(model.as_ref(), &plan(ctx, ctx.seed), &threshold_feedback(ctx)?)?;
        let w: Vec<f64> = logw.iter().map(|v| v.exp()).collect();
        let wm = stats::mean_se(&w);
        checks.push(Check::new(
            "girsanov_unit_mean",
            (wm.mean - 1.0).abs() <= 3.0 * wm.se,
            format!("mean {:.5} with SE {:.2e}", wm.mean, wm.se),
        ));
        Ok(Outcome {
            table,
            checks,
            summary: json!({ "moments": pilot.lines, "constants": constants, "weight_mean": wm }),
        })
    }
}

pub struct WeakStrong;

impl Experiment for WeakStrong {
    fn name(&self) -> &'static str {
        "weak_strong"
    }
    fn summary(&self) -> &'static str {
        "controlled SDE against the Girsanov-reweighted uncontrolled SDE on common noise"
    }
    fn anchor(&self) -> &'static str {
        "strong, weak and canonical weak formulations share one value"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let ctrl = threshold_feedback(ctx)?;
        let model = ctx.dynamics();
        let mut table = Table::new(&[
            "model",
            "seed",
            "strong_mean",
            "strong_se",
            "weak_mean",
            "weak_se",
            "diff_mean",
            "diff_se",
            "z",
        ]);
        let mut checks = Vec::new();
        for seed in ctx.seeds() {
            let r = weak_strong_agreement(model.as_ref(), &ctx.model.terminal, &ctrl, &plan(ctx, seed))?;
            table.push(vec![
                json!(ctx.model.key),
                json!(seed),
                json!(r.strong.mean),
                json!(r.strong.se),
                json!(r.weak.mean),
                json!(r.weak.se),
                json!(r.diff.mean),
                json!(r.diff.se),
                json!(r.z),
            ]);
            checks.push(Check::new(format!("z_below_3_seed_{seed}"), r.z.abs() < 3.0, format!("z = {:.3}", r.z)));
        }
        Ok(Outcome {
            table,
            checks,
            summary: json!({ "control_bound": CONTROL_BOUND }),
        })
    }
}
