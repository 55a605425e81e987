use std::sync::Arc;

use pathctrl_core::control::{convex_order_experiment, degenerate_sup_ladder, estimate_value_mc, McPolicySearch};
use pathctrl_core::linalg;
use pathctrl_core::model::transaction::{build_transaction_model, exponential_utility, push_matrix, Preset, TransactionModel, M_MATRIX};
use pathctrl_core::model::{perturbed_sigma_inverse, Dynamics, PerturbedModel};
use pathctrl_core::rng::path_rng;
use pathctrl_core::simulate::{ControlSpec, SimulationPlan};
use pathctrl_core::{Path, TimeGrid};
use rand::Rng;
use serde_json::json;

use super::{Context, Defaults, Experiment};
use crate::error::{CliError, Result};
use crate::report::{Check, Outcome, Table};

/// Control bound of the policy-search estimator.
const POLICY_BOUND: f64 = 2.0;
const ALGEBRA_STATES: usize = 1000;
/// Stream tag for the random states of the algebra check.
const ALGEBRA_TAG: u64 = 0xA1;

fn transaction(ctx: &Context, p: f64) -> Result<TransactionModel> {
    let preset = Preset::parse(ctx.config.model.as_ref().and_then(|m| m.preset.as_deref()).unwrap_or("constant"))?;
    let (r, m, s) = preset.coefficients(ctx.param("r"), ctx.param("m"), ctx.param("sigma"));
    Ok(build_transaction_model(ctx.param("lambda"), r, m, s, p, exponential_utility())?)
}

/// Buy a fixed amount of the risky asset at rate one half.
fn hold_plan(ctx: &Context, n_paths: usize) -> Result<SimulationPlan> {
    Ok(SimulationPlan::new(ctx.grid, n_paths, ctx.seed, ctx.model.x0.clone()).with_control(ControlSpec::constant(vec![0.0, 0.5, 0.0], 1.0)?))
}

fn need_two(ctx: &Context) -> Result<()> {
    if ctx.p_ladder.len() < 2 {
        return Err(CliError::config("p_ladder", "needs at least two indices"));
    }
    Ok(())
}

pub struct ConvexOrder;

impl Experiment for ConvexOrder {
    fn name(&self) -> &'static str {
        "convex_order"
    }
    fn summary(&self) -> &'static str {
        "paired terminal utility under p < q perturbations, plus exact identity cases"
    }
    fn anchor(&self) -> &'static str {
        "convex order of perturbed chains: more added noise cannot raise a concave reward"
    }
    fn models(&self) -> &'static [&'static str] {
        &["transaction"]
    }
    fn defaults(&self) -> Defaults {
        Defaults {
            model: "transaction",
            p_ladder: vec![2.0, 8.0],
            ..Defaults::default()
        }
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        need_two(ctx)?;
        let mut table = Table::new(&["case", "p", "q", "mean_p", "se_p", "mean_q", "se_q", "diff_mean", "diff_se", "identical"]);
        let mut checks = Vec::new();
        let plan = hold_plan(ctx, ctx.paths)?;
        let mut push = |case: &str, r: &pathctrl_core::control::ConvexOrderReport| {
            table.push(vec![
                json!(case),
                json!(r.p),
                json!(r.q),
                json!(r.value_p.mean),
                json!(r.value_p.se),
                json!(r.value_q.mean),
                json!(r.value_q.se),
                json!(r.diff.mean),
                json!(r.diff.se),
                json!(r.identical),
            ]);
        };
        for w in ctx.p_ladder.windows(2) {
            let (mp, mq) = (transaction(ctx, w[0])?, transaction(ctx, w[1])?);
            let r = convex_order_experiment(&mp.model, &mq.model, &mp.terminal, &plan)?;
            push("ordered", &r);
            checks.push(Check::new(
                format!("mean_p_{}_below_mean_q_{}", w[0], w[1]),
                r.value_p.mean <= r.value_q.mean + 3.0 * r.diff.se,
                format!("{:.6} vs {:.6} + 3 x {:.2e}", r.value_p.mean, r.value_q.mean, r.diff.se),
            ));
        }

        let p = ctx.p_ladder[0];
        let q = *ctx.p_ladder.last().unwrap();
        let m = transaction(ctx, p)?;
        let same = convex_order_experiment(&m.model, &m.model.clone(), &m.terminal, &plan)?;
        push("equal_index", &same);
        checks.push(Check::new(
            "equal_index_paths_identical",
            same.identical,
            format!("diff {}", same.diff.mean),
        ));

        let without_m = |p: f64| -> Result<PerturbedModel> {
            let tm = transaction(ctx, p)?;
            Ok(PerturbedModel::new(
                tm.model.base().clone(),
                move |_| -1.0 / p,
                |_, out| out.fill(0.0),
                p,
            )?)
        };
        let r = convex_order_experiment(&without_m(p)?, &without_m(q)?, &m.terminal, &plan)?;
        push("zero_perturbation_matrix", &r);
        checks.push(Check::new("zero_matrix_paths_identical", r.identical, format!("diff {}", r.diff.mean)));
        Ok(Outcome {
            table,
            checks,
            summary: json!({ "control": [0.0, 0.5, 0.0] }),
        })
    }
}

pub struct DegenerateLadder;

impl Experiment for DegenerateLadder {
    fn name(&self) -> &'static str {
        "degenerate_ladder"
    }
    fn summary(&self) -> &'static str {
        "policy-search values of the perturbed transaction model along increasing p, over seeds"
    }
    fn anchor(&self) -> &'static str {
        "the degenerate value is the supremum over vanishing nondegenerate perturbations"
    }
    fn models(&self) -> &'static [&'static str] {
        &["transaction"]
    }
    fn defaults(&self) -> Defaults {
        Defaults {
            model: "transaction",
            ..Defaults::default()
        }
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        need_two(ctx)?;
        let build = |p: f64| {
            let tm = transaction(ctx, p).map_err(|e| match e {
                CliError::Core(c) => c,
                other => pathctrl_core::Error::Precondition(other.to_string()),
            })?;
            Ok((Arc::new(tm.model) as Arc<dyn Dynamics>, tm.terminal))
        };
        let mut table = Table::new(&["seed", "p", "value", "se", "control"]);
        let mut checks = Vec::new();
        let n_gaps = ctx.p_ladder.len().saturating_sub(1);
        let mut gap_sum = vec![0.0; n_gaps];
        for seed in ctx.seeds() {
            let est = McPolicySearch {
                candidates: vec![
                    vec![0.0, 0.0, 0.0],
                    vec![0.0, 0.5, 0.0],
                    vec![0.0, 1.0, 0.0],
                    vec![0.0, 2.0, 0.0],
                    vec![1.0, 0.0, 0.0],
                ],
                n_pilot: (ctx.paths / 5).max(1000),
                n_paths: ctx.paths,
                pilot_seed: seed.wrapping_add(1 << 32),
                seed,
            };
            let r = degenerate_sup_ladder(&build, &ctx.p_ladder, &est, &ctx.model.x0, ctx.grid, POLICY_BOUND)?;
            for l in &r.levels {
                table.push(vec![
                    json!(seed),
                    json!(l.p),
                    json!(l.estimate.value),
                    json!(l.estimate.se),
                    l.estimate.meta["control"].clone(),
                ]);
            }
            for (s, g) in gap_sum.iter_mut().zip(&r.gaps) {
                *s += g;
            }
            checks.push(Check::new(
                format!("nondecreasing_seed_{seed}"),
                r.violations.is_empty(),
                format!("drops beyond 3 SE at {:?}", r.violations),
            ));
        }
        let avg: Vec<f64> = gap_sum.iter().map(|s| s / ctx.replicates as f64).collect();
        checks.push(Check::new(
            "average_gaps_shrink",
            avg.windows(2).all(|w| w[1] < w[0]),
            format!("average gaps {avg:.6?}"),
        ));
        Ok(Outcome {
            table,
            checks,
            summary: json!({ "average_gaps": avg, "n_bound": POLICY_BOUND }),
        })
    }
}

pub struct TransactionDemo;

impl Experiment for TransactionDemo {
    fn name(&self) -> &'static str {
        "transaction_demo"
    }
    fn summary(&self) -> &'static str {
        "perturbed transaction-cost volatility algebra on random states, and utility under a fixed policy"
    }
    fn anchor(&self) -> &'static str {
        "closed-form inverse of the perturbed volatility, its action on the push directions and the cross term"
    }
    fn models(&self) -> &'static [&'static str] {
        &["transaction"]
    }
    fn defaults(&self) -> Defaults {
        Defaults {
            model: "transaction",
            paths: 10_000,
            ..Defaults::default()
        }
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let lam = ctx.param("lambda");
        let f = push_matrix(lam);
        let hist_grid = TimeGrid::new(ctx.grid.t_start(), ctx.grid.t_end(), 4)?;
        let mut table = Table::new(&[
            "p",
            "states",
            "max_inverse_err",
            "max_push_err",
            "max_cross_abs",
            "utility_mean",
            "utility_se",
        ]);
        let (mut inv_ok, mut push_ok, mut cross_ok) = (true, true, true);
        let mut worst = (0.0f64, 0.0f64, 0.0f64);
        for (pi, &p) in ctx.p_ladder.iter().enumerate() {
            let tm = transaction(ctx, p)?;
            let (mut e_inv, mut e_push, mut e_cross) = (0.0f64, 0.0f64, 0.0f64);
            for i in 0..ALGEBRA_STATES {
                let mut rng = path_rng(ctx.seed, ALGEBRA_TAG + pi as u64, i as u64);
                let nodes: Vec<Vec<f64>> = (0..hist_grid.n_nodes())
                    .map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0)])
                    .collect();
                let path = Path::from_nodes(hist_grid, &nodes)?;
                let h = path.history(rng.random_range(0..=hist_grid.n_steps()));

                let closed = perturbed_sigma_inverse(&tm.model, &h)?.transpose().as_slice().to_vec();
                let mut sig = vec![0.0; 9];
                tm.model.vol(&h, &mut sig);
                let numeric = linalg::invert(&sig, 3).ok_or_else(|| pathctrl_core::Error::PerturbationInvalid { t: h.time(), p })?;
                let scale = 1.0 + linalg::frobenius(&numeric);
                let err = closed.iter().zip(&numeric).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                e_inv = e_inv.max(err / scale);
                inv_ok &= err <= 1e-10 * scale;

                let prod = linalg::matmul(&closed, &f, 3);
                let err = prod.iter().zip(&f).fold(0.0f64, |m, (a, b)| m.max((a + p * b).abs()));
                e_push = e_push.max(err);
                push_ok &= err <= f64::EPSILON * p * scale;

                let mut base = vec![0.0; 9];
                tm.model.base().vol(&h, &mut base);
                let lhs = linalg::matmul(&M_MATRIX, &linalg::transpose(&base, 3), 3);
                let rhs = linalg::matmul(&base, &M_MATRIX, 3);
                let err = lhs.iter().zip(&rhs).fold(0.0f64, |m, (a, b)| m.max((a + b).abs()));
                e_cross = e_cross.max(err);
                cross_ok &= err == 0.0;
            }
            worst = (worst.0.max(e_inv), worst.1.max(e_push), worst.2.max(e_cross));
            let v = estimate_value_mc(&tm.model, &tm.terminal, &hold_plan(ctx, ctx.paths)?)?;
            table.push(vec![
                json!(p),
                json!(ALGEBRA_STATES),
                json!(e_inv),
                json!(e_push),
                json!(e_cross),
                json!(v.value),
                json!(v.se),
            ]);
        }
        let checks = vec![
            Check::new("closed_inverse_matches_numeric", inv_ok, format!("max relative error {:.2e}", worst.0)),
            Check::new("inverse_maps_push_to_minus_p_push", push_ok, format!("max error {:.2e}", worst.1)),
            Check::new("cross_term_vanishes", cross_ok, format!("max |M s^T + s M| = {:.2e}", worst.2)),
        ];
        Ok(Outcome {
            table,
            checks,
            summary: json!({ "lambda": lam, "states_per_p": ALGEBRA_STATES }),
        })
    }
}
