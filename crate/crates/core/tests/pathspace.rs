use pathctrl_core::pathspace::{concat, d_infinity, interpolate, sup_norm};
use pathctrl_core::{Path, TimeGrid};
use proptest::prelude::*;

fn grid(n: usize) -> TimeGrid {
    TimeGrid::new(0.0, 1.0, n).unwrap()
}

fn path_strategy(n: usize, d: usize) -> impl Strategy<Value = Path> {
    prop::collection::vec(-5.0f64..5.0, (n + 1) * d).prop_map(move |v| Path::from_flat(grid(n), d, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1500))]

    #[test]
    fn d_infinity_triangle(
        a in path_strategy(8, 2),
        b in path_strategy(8, 2),
        c in path_strategy(8, 2),
        t in prop::array::uniform3(0.0f64..1.0),
    ) {
        let ab = d_infinity(t[0], &a, t[1], &b);
        let bc = d_infinity(t[1], &b, t[2], &c);
        let ac = d_infinity(t[0], &a, t[2], &c);
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn d_infinity_symmetric_and_zero_on_diagonal(a in path_strategy(6, 1), b in path_strategy(6, 1), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        prop_assert_eq!(d_infinity(s, &a, s, &a), 0.0);
        prop_assert!((d_infinity(s, &a, t, &b) - d_infinity(t, &b, s, &a)).abs() < 1e-15);
    }

    #[test]
    fn concat_keeps_prefix_and_increments(a in path_strategy(10, 2), b in path_strategy(10, 2), k in 0usize..=10) {
        let s = grid(10).node(k);
        let c = concat(&a, &b, s).unwrap();
        for i in 0..=k {
            prop_assert_eq!(c.node(i), a.node(i));
        }
        for i in k + 1..=10 {
            for j in 0..2 {
                let want = b.node(i)[j] - b.node(i - 1)[j];
                let got = c.node(i)[j] - c.node(i - 1)[j];
                prop_assert!((want - got).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sup_norm_is_monotone_in_s(a in path_strategy(10, 2), s in 0.0f64..1.0, ds in 0.0f64..0.5) {
        prop_assert!(sup_norm(&a, s) <= sup_norm(&a, (s + ds).min(1.0)) + 1e-15);
    }

    #[test]
    fn interpolant_hits_nodes(v in prop::collection::vec(-3.0f64..3.0, 6)) {
        let pts: Vec<Vec<f64>> = v.iter().map(|x| vec![*x]).collect();
        let p = interpolate(&pts, grid(5)).unwrap();
        for (k, x) in v.iter().enumerate() {
            prop_assert_eq!(p.eval(grid(5).node(k))[0], *x);
        }
    }
}

#[test]
fn concat_with_later_start() {
    // x′ starts at 0.5 on a grid with the same step and end time.
    let x = Path::from_nodes(grid(4), &[vec![0.0], vec![1.0], vec![1.0], vec![2.0], vec![0.0]]).unwrap();
    let late = TimeGrid::new(0.5, 1.0, 2).unwrap();
    let xp = Path::from_nodes(late, &[vec![10.0], vec![11.0], vec![13.0]]).unwrap();
    let c = concat(&x, &xp, 0.5).unwrap();
    let got: Vec<f64> = (0..5).map(|k| c.node(k)[0]).collect();
    assert_eq!(got, vec![0.0, 1.0, 1.0, 2.0, 4.0]);
}

#[test]
fn concat_rejects_off_node_and_mismatched_grids() {
    let x = Path::constant(grid(4), &[0.0]).unwrap();
    assert!(concat(&x, &x, 0.3).is_err());
    let other = Path::constant(TimeGrid::new(0.0, 1.0, 5).unwrap(), &[0.0]).unwrap();
    assert!(concat(&x, &other, 0.0).is_err());
}

#[test]
fn csv_round_trip_preserves_values() {
    let p = Path::from_nodes(grid(3), &[vec![0.1, -2.0], vec![0.3, 1.5], vec![1.0 / 3.0, 0.0], vec![-7.25, 2.0]]).unwrap();
    let mut buf = Vec::new();
    p.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("t,x1,x2\n"));
    let q = Path::read_csv(buf.as_slice()).unwrap();
    assert_eq!(p, q);
}
