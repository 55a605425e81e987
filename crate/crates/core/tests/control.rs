use std::sync::Arc;

use pathctrl_core::benchmark;
use pathctrl_core::control::grid_dp::{boundary_hit_probability, uniform_levels};
use pathctrl_core::control::{
    calibrated_bounds, convex_order_experiment, degenerate_sup_ladder, dpp_residual, estimate_value_mc, regularity_probe, solve_grid_dp, GridDpSpec,
    LiftedOracleField, McPolicySearch, RegularityProbe,
};
use pathctrl_core::model::transaction::{build_transaction_model, exponential_utility, Preset, M_MATRIX};
use pathctrl_core::model::{Dynamics, ModelSpec, PerturbedModel, TerminalFunctional};
use pathctrl_core::simulate::{ControlSpec, SimulationPlan};
use pathctrl_core::{Error, TimeGrid};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn toy() -> Arc<dyn Dynamics> {
    Arc::new(benchmark::model())
}

fn unit(n: usize) -> TimeGrid {
    TimeGrid::new(0.0, 1.0, n).unwrap()
}

fn toy_spec(n: f64, points: usize) -> GridDpSpec {
    GridDpSpec::new(vec![(-4.5, 5.5)], points, uniform_levels(n, 0.25, 1)).unwrap()
}

/// `E[−((ξ − 1)⁺)²] = −(2Φ̄(1) − φ(1))` for standard normal `ξ`.
fn closed_form_oracle() -> f64 {
    let z = Normal::new(0.0, 1.0).unwrap();
    -(2.0 * z.sf(1.0) - z.pdf(1.0))
}

#[test]
fn quadrature_oracle_matches_closed_form() {
    assert!((benchmark::oracle_value() - closed_form_oracle()).abs() < 1e-8);
}

#[test]
fn null_control_reproduces_gaussian_moment() {
    // E[−(B₁ − 1)²] = −(Var + mean²) = −2.
    let u = benchmark::terminal();
    let coarse = solve_grid_dp(toy(), &u, 0.0, &toy_spec(0.0, 201), unit(50), &[0.0]).unwrap();
    let fine = solve_grid_dp(toy(), &u, 0.0, &toy_spec(0.0, 401), unit(50), &[0.0]).unwrap();
    let (ec, ef) = ((coarse.value() + 2.0).abs(), (fine.value() + 2.0).abs());
    assert!(ec < 0.02, "{}", coarse.value());
    assert!(ef < ec / 3.0, "{ec} {ef}");
}

#[test]
fn null_control_matches_monte_carlo_chain() {
    let u = TerminalFunctional::markov("bump", |x| (-(x[0] - 0.5).powi(2)).exp());
    let dp = solve_grid_dp(toy(), &u, 0.0, &toy_spec(0.0, 401), unit(20), &[0.0]).unwrap();
    let mc = estimate_value_mc(toy().as_ref(), &u, &SimulationPlan::new(unit(20), 200_000, 3, vec![0.0])).unwrap();
    assert!((dp.value() - mc.value).abs() < 3.0 * mc.se + 2e-3, "{} vs {mc:?}", dp.value());
}

#[test]
fn value_is_monotone_in_the_bound() {
    let u = benchmark::terminal();
    let vals: Vec<f64> = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|&n| solve_grid_dp(toy(), &u, n, &toy_spec(n, 101), unit(25), &[0.0]).unwrap().value())
        .collect();
    for w in vals.windows(2) {
        assert!(w[0] <= w[1], "{vals:?}");
    }
    // The limit sits above every bounded value.
    assert!(vals[5] < benchmark::oracle_value());
}

#[test]
fn values_approach_the_singular_limit() {
    let u = benchmark::terminal();
    let gap = |n: f64| (solve_grid_dp(toy(), &u, n, &toy_spec(n, 201), unit(50), &[0.0]).unwrap().value() - closed_form_oracle()).abs();
    let (g4, g16) = (gap(4.0), gap(16.0));
    assert!(g16 < 0.5 * g4, "{g4} {g16}");
    assert!(g16 < 0.05);
}

#[test]
fn deterministic_push_picks_the_top_level() {
    let m: Arc<dyn Dynamics> = Arc::new(ModelSpec::constant("push", vec![0.0], vec![0.0], vec![1.0]).unwrap());
    let u = TerminalFunctional::markov("x", |x| x[0]);
    let sol = solve_grid_dp(m, &u, 2.0, &toy_spec(2.0, 51), unit(10), &[0.0]).unwrap();
    let top = sol.levels.len() - 1;
    let mut x = [0.0];
    for k in 0..10 {
        let room = 2.0 * (1.0 - sol.grid.node(k));
        for i in 0..sol.space.len() {
            sol.space.point(i, &mut x);
            // Near the upper edge constant extrapolation makes every push a tie.
            if x[0] + room < 5.5 - 1e-9 {
                assert_eq!(sol.policy_index(k, i), top, "k={k} x={}", x[0]);
            }
        }
    }
    assert!((sol.value() - 2.0).abs() < 1e-12);
}

#[test]
fn zero_policy_mean_of_linear_payoff() {
    let u = TerminalFunctional::markov("x", |x| x[0]);
    let e = estimate_value_mc(toy().as_ref(), &u, &SimulationPlan::new(unit(50), 50_000, 2, vec![0.3])).unwrap();
    assert!((e.value - 0.3).abs() < 3.0 * e.se);
}

#[test]
fn replayed_policy_attains_dp_value_and_bang_bang_does_not_beat_it() {
    let u = benchmark::terminal();
    let n = 4.0;
    let spec = toy_spec(n, 201);
    let sol = Arc::new(solve_grid_dp(toy(), &u, n, &spec, unit(50), &[0.0]).unwrap());
    let fine = solve_grid_dp(toy(), &u, n, &spec.clone().with_n_space(401), unit(50), &[0.0]).unwrap();
    let interp = 4.0 / 3.0 * (sol.value() - fine.value()).abs();
    let plan = SimulationPlan::new(unit(50), 100_000, 11, vec![0.0]);
    let replay = estimate_value_mc(toy().as_ref(), &u, &plan.clone().with_control(sol.replay_policy().unwrap())).unwrap();
    assert!(
        (replay.value - sol.value()).abs() < 3.0 * replay.se + interp + 5e-3,
        "{replay:?} vs {}",
        sol.value()
    );

    let bang = ControlSpec::feedback(1, n, move |_, h, out| out[0] = if h.current()[0] < 1.0 { n } else { 0.0 }).unwrap();
    let b = estimate_value_mc(toy().as_ref(), &u, &plan.with_control(bang)).unwrap();
    assert!(b.value <= sol.value() + 3.0 * b.se + interp, "{b:?}");
}

#[test]
fn box_is_rarely_left_under_the_dp_policy() {
    let u = benchmark::terminal();
    let sol = Arc::new(solve_grid_dp(toy(), &u, 16.0, &toy_spec(16.0, 201), unit(50), &[0.0]).unwrap());
    let plan = SimulationPlan::new(unit(50), 20_000, 5, vec![0.0]).with_control(sol.replay_policy().unwrap());
    let p = boundary_hit_probability(toy().as_ref(), &plan, &[(-4.5, 5.5)]).unwrap();
    assert!(p < 1e-3, "{p}");
}

#[test]
fn dpp_residual_is_within_interpolation_error_and_shrinks() {
    let u = benchmark::terminal();
    for n in [1.0, 4.0] {
        let r = dpp_residual(toy(), &u, n, &toy_spec(n, 101), unit(50), &[0.0], 25).unwrap();
        assert!(r.within(2.0), "{r:?}");
        assert!(r.order >= 1.0, "{r:?}");
    }
}

#[test]
fn dpp_residual_vanishes_for_deterministic_affine_problem() {
    let m: Arc<dyn Dynamics> = Arc::new(ModelSpec::constant("drift", vec![0.5], vec![0.0], vec![1.0]).unwrap());
    let u = TerminalFunctional::markov("affine", |x| 2.0 * x[0] + 1.0);
    let r = dpp_residual(m, &u, 1.0, &toy_spec(1.0, 41), unit(10), &[0.0], 5).unwrap();
    assert!(r.residual < 1e-12, "{r:?}");
    assert!((r.v_full - (2.0 * 1.5 + 1.0)).abs() < 1e-12);
}

#[test]
fn dpp_rejects_endpoint_split() {
    let u = benchmark::terminal();
    assert!(dpp_residual(toy(), &u, 1.0, &toy_spec(1.0, 11), unit(4), &[0.0], 0).is_err());
    assert!(dpp_residual(toy(), &u, 1.0, &toy_spec(1.0, 11), unit(4), &[0.0], 4).is_err());
}

fn transaction(p: f64) -> (PerturbedModel, TerminalFunctional) {
    let (r, m, s) = Preset::Constant.coefficients(0.0, 0.05, 0.2);
    let tm = build_transaction_model(0.1, r, m, s, p, exponential_utility()).unwrap();
    (tm.model, tm.terminal)
}

fn tx_plan(n_paths: usize, seed: u64) -> SimulationPlan {
    SimulationPlan::new(unit(25), n_paths, seed, vec![1.0, 0.0, 0.0]).with_control(ControlSpec::constant(vec![0.0, 0.5, 0.0], 1.0).unwrap())
}

#[test]
fn more_noise_cannot_help_a_concave_reward() {
    let (mp, u) = transaction(2.0);
    let (mq, _) = transaction(8.0);
    let r = convex_order_experiment(&mp, &mq, &u, &tx_plan(50_000, 1)).unwrap();
    assert!(r.holds, "{r:?}");
    assert!(r.value_p.mean <= r.value_q.mean + 3.0 * r.diff.se);
    assert!(!r.identical);
}

#[test]
fn equal_noise_and_vanishing_perturbation_give_identical_paths() {
    let (mp, u) = transaction(4.0);
    let r = convex_order_experiment(&mp, &mp.clone(), &u, &tx_plan(2000, 2)).unwrap();
    assert!(r.identical && r.diff.mean == 0.0);

    let zero_m = |p: f64| {
        let (m, _) = transaction(p);
        PerturbedModel::new(m.base().clone(), move |_| -1.0 / p, |_, out| out.fill(0.0), p).unwrap()
    };
    let r = convex_order_experiment(&zero_m(2.0), &zero_m(8.0), &u, &tx_plan(2000, 3)).unwrap();
    assert!(r.identical, "{r:?}");
}

#[test]
fn reversed_noise_order_is_a_precondition_error() {
    let (mp, u) = transaction(8.0);
    let (mq, _) = transaction(2.0);
    let err = convex_order_experiment(&mp, &mq, &u, &tx_plan(100, 4)).unwrap_err();
    assert!(matches!(err, Error::Precondition(_)), "{err}");
}

#[test]
fn perturbation_matrix_is_the_account_projection() {
    let (m, _) = transaction(2.0);
    assert_eq!(m.m_at(0.3), M_MATRIX.to_vec());
}

fn policy_search(seed: u64) -> McPolicySearch {
    McPolicySearch {
        candidates: vec![
            vec![0.0, 0.0, 0.0],
            vec![0.0, 0.5, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ],
        n_pilot: 5000,
        n_paths: 30_000,
        pilot_seed: 1000 + seed,
        seed,
    }
}

#[test]
fn degenerate_ladder_is_nondecreasing_with_shrinking_gaps() {
    let build = |p: f64| {
        let (m, u) = transaction(p);
        Ok((Arc::new(m) as Arc<dyn Dynamics>, u))
    };
    let mut first_gap = 0.0;
    let mut last_gap = 0.0;
    for seed in 1..=3 {
        let r = degenerate_sup_ladder(&build, &[2.0, 4.0, 8.0, 16.0], &policy_search(seed), &[1.0, 0.0, 0.0], unit(25), 2.0).unwrap();
        assert!(r.violations.is_empty(), "{r:?}");
        first_gap += r.gaps[0];
        last_gap += r.gaps[2];
    }
    assert!(last_gap < first_gap, "{first_gap} {last_gap}");
}

#[test]
fn vanishing_perturbation_gives_a_flat_ladder() {
    let build = |p: f64| {
        let (m, u) = transaction(p);
        let flat = PerturbedModel::new(m.base().clone(), |_| 0.0, |_, out| out.copy_from_slice(&M_MATRIX), p)?;
        Ok((Arc::new(flat) as Arc<dyn Dynamics>, u))
    };
    let r = degenerate_sup_ladder(&build, &[2.0, 4.0, 8.0], &policy_search(1), &[1.0, 0.0, 0.0], unit(10), 2.0).unwrap();
    assert!(r.gaps.iter().all(|&g| g == 0.0), "{:?}", r.gaps);
}

#[test]
fn oracle_field_regularity() {
    let probe = RegularityProbe {
        t: 0.0,
        x: vec![0.0],
        axis: 0,
        mu: 0.0,
        sigma: 1.0,
        h_list: vec![0.01, 0.05, 0.1, 0.2],
        tau_list: vec![0.01, 0.04, 0.16],
        panels: 400,
    };
    let r = regularity_probe(&LiftedOracleField { tol: 1e-10 }, &probe).unwrap();
    let lip = benchmark::lifted_lipschitz(0.2, 1.0);
    assert!(r.max_ratio <= 1.2 * lip, "{} vs {lip}", r.max_ratio);
    assert!((0.4..=0.6).contains(&r.holder_exponent), "{}", r.holder_exponent);
    // Zero-control martingale: the signed shift vanishes.
    assert!(r.time.iter().all(|p| p.mean_shift < 1e-6), "{:?}", r.time);
}

#[test]
fn dp_field_regularity_against_oracle_constant() {
    let u = benchmark::terminal();
    let sol = solve_grid_dp(toy(), &u, 16.0, &toy_spec(16.0, 201), unit(50), &[0.0]).unwrap();
    let probe = RegularityProbe {
        t: 0.0,
        x: vec![0.0],
        axis: 0,
        mu: 0.0,
        sigma: 1.0,
        h_list: vec![0.05, 0.1, 0.2],
        tau_list: vec![0.01, 0.04, 0.16],
        panels: 200,
    };
    let r = regularity_probe(&sol, &probe).unwrap();
    assert!(r.max_ratio <= 1.2 * benchmark::lifted_lipschitz(0.2, 1.0), "{r:?}");
    assert!((0.4..=0.6).contains(&r.holder_exponent), "{r:?}");
}

#[test]
fn constant_payoff_field_has_zero_differences() {
    let u = TerminalFunctional::markov("c", |_| 3.0);
    let sol = solve_grid_dp(toy(), &u, 1.0, &toy_spec(1.0, 51), unit(10), &[0.0]).unwrap();
    let probe = RegularityProbe {
        t: 0.0,
        x: vec![0.0],
        axis: 0,
        mu: 0.0,
        sigma: 1.0,
        h_list: vec![0.1],
        tau_list: vec![0.1, 0.2],
        panels: 50,
    };
    let r = regularity_probe(&sol, &probe).unwrap();
    // Quadrature weights sum to one only up to rounding.
    assert!(r.max_ratio < 1e-10, "{}", r.max_ratio);
    assert!(r.time.iter().all(|p| p.l1_modulus < 1e-12), "{:?}", r.time);
}

#[test]
fn calibrated_constants_hold_on_fresh_points() {
    let field = LiftedOracleField { tol: 1e-10 };
    let pilot: Vec<(f64, Vec<f64>)> = (0..8).map(|i| (0.1 * i as f64, vec![-1.0 + 0.3 * i as f64])).collect();
    let fresh: Vec<(f64, Vec<f64>)> = (0..8).map(|i| (0.05 + 0.1 * i as f64, vec![-0.85 + 0.3 * i as f64])).collect();
    let b = calibrated_bounds(&field, &pilot, &fresh, 0.05, 0.04, 1.5);
    assert!(b.holds, "{b:?}");
}
