use pathctrl_core::linalg;
use pathctrl_core::model::transaction::{self, build_transaction_model, exponential_utility, Preset, M_MATRIX};
use pathctrl_core::model::{
    in_constraint_cone, perturbed_sigma_inverse, rho, support_function, ConstraintSet, Dynamics, ModelSpec, TerminalFunctional,
};
use pathctrl_core::{Path, TimeGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), -2.0f64..2.0], d * d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12_000))]

    #[test]
    fn cone_membership_iff_zero_penalty(f in mat(3), q in prop::collection::vec(-3.0f64..3.0, 3)) {
        let cs = ConstraintSet::constant(3, f.clone()).unwrap();
        let mut ftq = vec![0.0; 3];
        linalg::mat_t_vec(&f, &q, &mut ftq);
        prop_assert_eq!(in_constraint_cone(&q, 0.0, &cs), rho(&ftq) == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn support_function_is_positively_homogeneous(f in mat(2), u in prop::collection::vec(-3.0f64..3.0, 2), c in 0.01f64..50.0) {
        let cs = ConstraintSet::constant(2, f).unwrap();
        prop_assert_eq!(support_function(&u, 0.0, &cs), support_function(&u.iter().map(|v| c * v).collect::<Vec<_>>(), 0.0, &cs));
    }

    #[test]
    fn support_function_is_subadditive(f in mat(2), u in prop::collection::vec(-3.0f64..3.0, 2), v in prop::collection::vec(-3.0f64..3.0, 2)) {
        let cs = ConstraintSet::constant(2, f).unwrap();
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        prop_assert!(support_function(&w, 0.0, &cs) <= support_function(&u, 0.0, &cs) + support_function(&v, 0.0, &cs));
    }

    #[test]
    fn polar_generators_have_zero_support(f in mat(3), c in prop::collection::vec(0.0f64..4.0, 3)) {
        let cs = ConstraintSet::constant(3, f.clone()).unwrap();
        let mut u = vec![0.0; 3];
        linalg::matvec(&f, &c, &mut u);
        prop_assert_eq!(support_function(&u, 0.0, &cs), 0.0);
    }

    #[test]
    fn support_is_never_below_pairing_with_cone(f in mat(2), q in prop::collection::vec(-3.0f64..3.0, 2), u in prop::collection::vec(-3.0f64..3.0, 2)) {
        // δ(u) ≥ k·u for every k in the cone.
        let cs = ConstraintSet::constant(2, f).unwrap();
        if in_constraint_cone(&q, 0.0, &cs) {
            let pairing: f64 = q.iter().zip(&u).map(|(a, b)| a * b).sum();
            prop_assert!(support_function(&u, 0.0, &cs) >= pairing - 1e-9);
        }
    }
}

#[test]
fn rho_examples() {
    assert_eq!(rho(&[0.0, 0.0]), 0.0);
    assert_eq!(rho(&[1.0, -2.0, 3.0]), 4.0);
    assert_eq!(rho(&[-1.0, -5.0]), 0.0);
}

#[test]
fn liquidation_examples() {
    assert_eq!(transaction::liquidation(1.0, 0.0, 0.1), 1.0);
    assert!((transaction::liquidation(0.0, 1.1, 0.1) - 1.0).abs() < 1e-15);
    assert!((transaction::liquidation(2.0, -1.0, 0.1) - 0.9).abs() < 1e-15);
}

fn random_history_path(rng: &mut ChaCha8Rng, grid: TimeGrid) -> Path {
    let nodes: Vec<Vec<f64>> = (0..grid.n_nodes())
        .map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0)])
        .collect();
    Path::from_nodes(grid, &nodes).unwrap()
}

#[test]
fn transaction_algebra_on_random_states() {
    let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lam = 0.1;
    let f = transaction::push_matrix(lam);
    for preset in [Preset::Constant, Preset::RunningMax] {
        for i in 0..1000 {
            let p = [0.5, 2.0, 4.0, 16.0][i % 4];
            let (r, m, s) = preset.coefficients(0.01, 0.05, 0.2);
            let tm = build_transaction_model(lam, r, m, s, p, exponential_utility()).unwrap();
            let path = random_history_path(&mut rng, grid);
            let h = path.history(rng.random_range(0..=4));

            // Closed-form inverse against numeric inversion.
            let closed = perturbed_sigma_inverse(&tm.model, &h).unwrap().transpose().as_slice().to_vec();
            let mut sig = vec![0.0; 9];
            tm.model.vol(&h, &mut sig);
            let numeric = linalg::invert(&sig, 3).unwrap();
            let scale = 1.0 + linalg::frobenius(&numeric);
            for (a, b) in closed.iter().zip(&numeric) {
                assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
            }
            let lu = nalgebra::DMatrix::from_row_slice(3, 3, &sig).try_inverse().unwrap();
            for (a, b) in closed.iter().zip(lu.transpose().as_slice()) {
                assert!((a - b).abs() <= 1e-10 * scale);
            }

            // (σ^p)⁻¹ f = −p f.
            let prod = linalg::matmul(&closed, &f, 3);
            for (a, b) in prod.iter().zip(&f) {
                assert_eq!(*a, -p * b);
            }

            // M σᵀ + σ M = 0 for the unperturbed σ.
            let mut base = vec![0.0; 9];
            tm.model.base().vol(&h, &mut base);
            let lhs = linalg::matmul(&M_MATRIX, &linalg::transpose(&base, 3), 3);
            let rhs = linalg::matmul(&base, &M_MATRIX, 3);
            assert!(lhs.iter().zip(&rhs).all(|(a, b)| a + b == 0.0));
        }
    }
}

#[test]
fn terminal_functional_rejects_state_evaluation_when_path_dependent() {
    let u = TerminalFunctional::path("max", |h| h.running_max(0));
    assert!(u.eval_state(&[1.0]).is_err());
    let v = TerminalFunctional::markov("sq", |x| x[0] * x[0]);
    assert_eq!(v.eval_state(&[3.0]).unwrap(), 9.0);
}

#[test]
fn constant_model_reports_markovian_and_deterministic() {
    let m = ModelSpec::constant("z", vec![0.0], vec![0.0], vec![1.0]).unwrap();
    assert!(m.is_markovian());
    assert!(m.is_deterministic());
}
