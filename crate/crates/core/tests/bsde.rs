use pathctrl_core::benchmark;
use pathctrl_core::bsde::{constraint_violation, penalty_monotonicity, solve_penalized, solve_with, BasisSpec, SchemeRegistry};
use pathctrl_core::model::{ModelSpec, TerminalFunctional};
use pathctrl_core::simulate::{simulate_forward, Ensemble, SimulationPlan};
use pathctrl_core::TimeGrid;

fn toy_ensemble(n_steps: usize, n_paths: usize, seed: u64) -> Ensemble {
    let grid = TimeGrid::new(0.0, 1.0, n_steps).unwrap();
    simulate_forward(&benchmark::model(), &SimulationPlan::new(grid, n_paths, seed, vec![0.0])).unwrap()
}

#[test]
fn constant_terminal_with_zero_penalty_is_exact() {
    let ens = toy_ensemble(10, 2000, 1);
    let u = TerminalFunctional::markov("c", |_| 2.5);
    for scheme in ["tilted", "explicit"] {
        let sol = solve_with(scheme, &benchmark::model(), &u, 0.0, &ens, &BasisSpec::polynomial(0)).unwrap();
        for k in 0..=10 {
            for j in 0..sol.n_paths() {
                assert!((sol.y(j, k) - 2.5).abs() < 1e-10);
            }
        }
        for k in 0..10 {
            assert!(sol.z(0, k)[0].abs() < 1e-10);
        }
        assert!(constraint_violation(&sol, &benchmark::model(), &ens).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn terminal_slice_equals_payoff() {
    let ens = toy_ensemble(8, 500, 2);
    let u = benchmark::terminal();
    let sol = solve_penalized(&benchmark::model(), &u, 4.0, &ens, &BasisSpec::local_bins(8)).unwrap();
    for j in 0..ens.n_paths() {
        assert_eq!(sol.y(j, 8), benchmark::payoff(ens.node(j, 8)[0]));
    }
}

/// `U = x_T` makes the driver constant: `Z ≡ 1` and `Y_t = x₀ + n(T − t)`.
/// A degree-one basis spans the exact continuation values.
#[test]
fn linear_terminal_closed_form() {
    let ens = toy_ensemble(20, 40_000, 3);
    let u = TerminalFunctional::markov("x", |x| x[0]);
    let n = 3.0;
    for scheme in ["tilted", "explicit"] {
        let sol = solve_with(scheme, &benchmark::model(), &u, n, &ens, &BasisSpec::polynomial(1)).unwrap();
        for k in 0..=20 {
            let t = sol.grid.node(k);
            let m = sol.mean_y(k);
            assert!((m.mean - n * (1.0 - t)).abs() < 3.0 * sol.y0.se.max(m.se) + 0.01, "{scheme} k={k}: {m:?}");
        }
        for k in 0..20 {
            let zbar = (0..sol.n_paths()).map(|j| sol.z(j, k)[0]).sum::<f64>() / sol.n_paths() as f64;
            assert!((zbar - 1.0).abs() < 0.03, "{scheme} k={k}: {zbar}");
        }
        for v in &sol.violation {
            assert!((v - 1.0).abs() < 0.03, "{scheme}: {v}");
        }
        assert!((sol.penalty_paid() - n).abs() < 0.1);
    }
    // Hat functions only approximate the shifted evaluations.
    let sol = solve_penalized(&benchmark::model(), &u, n, &ens, &BasisSpec::local_bins(8)).unwrap();
    assert!((sol.y0.mean - n).abs() < 0.15, "{:?}", sol.y0);
}

#[test]
fn zero_penalty_telescopes_to_terminal_mean() {
    let ens = toy_ensemble(25, 20_000, 4);
    let u = benchmark::terminal();
    let sol = solve_penalized(&benchmark::model(), &u, 0.0, &ens, &BasisSpec::polynomial(3)).unwrap();
    let terminal: Vec<f64> = sol.y_slice(25);
    let mean_u = terminal.iter().sum::<f64>() / terminal.len() as f64;
    let se = pathctrl_core::stats::mean_se(&terminal).se;
    assert!((sol.y0.mean - mean_u).abs() < 3.0 * se);
    assert!(sol.y0_std < 1e-9);
}

#[test]
fn zero_penalty_scales_linearly() {
    let ens = toy_ensemble(10, 3000, 5);
    let u = benchmark::terminal();
    let a = solve_penalized(&benchmark::model(), &u, 0.0, &ens, &BasisSpec::polynomial(2)).unwrap();
    let b = solve_penalized(&benchmark::model(), &u.scaled(3.0), 0.0, &ens, &BasisSpec::polynomial(2)).unwrap();
    for k in 0..=10 {
        for j in (0..3000).step_by(97) {
            let (ya, yb) = (a.y(j, k), b.y(j, k));
            assert!((3.0 * ya - yb).abs() <= 1e-9 * (1.0 + yb.abs()));
            if k < 10 {
                let (za, zb) = (a.z(j, k)[0], b.z(j, k)[0]);
                assert!((3.0 * za - zb).abs() <= 1e-9 * (1.0 + zb.abs()));
            }
        }
    }
}

#[test]
fn constant_terminal_gives_flat_ladder() {
    let ens = toy_ensemble(10, 2000, 6);
    let u = TerminalFunctional::markov("c", |_| -1.0);
    let r = penalty_monotonicity(&benchmark::model(), &u, &[0.0, 1.0, 4.0, 16.0], &ens, &BasisSpec::local_bins(8)).unwrap();
    assert!(r.levels.iter().all(|l| (l.value + 1.0).abs() < 1e-10));
    assert!(r.monotone());
    assert!(r.saturation_gap.abs() < 1e-10);
}

#[test]
fn benchmark_ladder_is_monotone_and_pays_less_penalty() {
    let ens = toy_ensemble(25, 20_000, 7);
    let u = benchmark::terminal();
    let r = penalty_monotonicity(
        &benchmark::model(),
        &u,
        &[0.0, 1.0, 2.0, 4.0, 8.0, 16.0],
        &ens,
        &BasisSpec::local_bins(16),
    )
    .unwrap();
    assert!(r.monotone(), "{:?}", r.levels);
    let gaps: Vec<f64> = r.levels.windows(2).map(|w| w[1].value - w[0].value).collect();
    assert!(gaps[3] < gaps[2] && gaps[4] < gaps[3], "{gaps:?}");
    // Integral of the violation at n ∈ {1, 4, 16}.
    let violation_mass: Vec<f64> = [1usize, 3, 5].iter().map(|&i| r.penalty_paid[i] / r.levels[i].level).collect();
    assert!(
        violation_mass[0] > violation_mass[1] && violation_mass[1] > violation_mass[2],
        "{violation_mass:?}"
    );
}

#[test]
fn rejects_ladders_that_do_not_increase() {
    let ens = toy_ensemble(4, 100, 8);
    let u = benchmark::terminal();
    assert!(penalty_monotonicity(&benchmark::model(), &u, &[1.0, 1.0], &ens, &BasisSpec::polynomial(1)).is_err());
}

#[test]
fn singular_volatility_is_rejected() {
    let m = ModelSpec::constant("flat", vec![0.0], vec![0.0], vec![1.0]).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
    let ens = simulate_forward(&m, &SimulationPlan::new(grid, 10, 0, vec![0.0])).unwrap();
    assert!(solve_penalized(&m, &benchmark::terminal(), 1.0, &ens, &BasisSpec::polynomial(1)).is_err());
}

#[test]
fn registry_knows_both_schemes() {
    let r = SchemeRegistry::with_builtin();
    assert_eq!(r.names(), vec!["tilted", "explicit"]);
    let err = r.get("picard").err().unwrap().to_string();
    assert!(err.contains("scheme"), "{err}");
}

#[test]
fn csv_export_has_one_row_per_node() {
    let ens = toy_ensemble(5, 200, 9);
    let sol = solve_penalized(&benchmark::model(), &benchmark::terminal(), 1.0, &ens, &BasisSpec::polynomial(2)).unwrap();
    let mut buf = Vec::new();
    sol.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("k,t,mean_Y,se_Y,mean_rho_violation\n"));
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().last().unwrap().ends_with(','));
}
