//! Small dense helpers on row-major `d×d` slices. Anything heavier goes
//! through nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative threshold under which a pivot/singular value counts as zero.
pub const SINGULAR_TOL: f64 = 1e-12;

pub fn matvec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for i in 0..out.len() {
        out[i] = (0..d).map(|j| a[i * d + j] * x[j]).sum();
    }
}

/// `aᵀ x` for a square row-major `a`.
pub fn mat_t_vec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for j in 0..d {
        out[j] = (0..d).map(|i| a[i * d + j] * x[i]).sum();
    }
}

pub fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[j * d + i] = a[i * d + j];
        }
    }
    out
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        out[i * d + i] = 1.0;
    }
    out
}

/// Inverse of a row-major `d×d` matrix, or `None` when it is numerically
/// singular (reciprocal condition number below [`SINGULAR_TOL`]).
pub fn invert(a: &[f64], d: usize) -> Option<Vec<f64>> {
    if d == 1 {
        return (a[0].abs() > SINGULAR_TOL * 1e-3 && a[0].is_finite()).then(|| vec![1.0 / a[0]]);
    }
    let m = DMatrix::from_row_slice(d, d, a);
    let sv = m.clone().singular_values();
    let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    if !(smax.is_finite()) || smax == 0.0 || smin < SINGULAR_TOL * smax {
        return None;
    }
    let inv = m.try_inverse()?;
    Some(inv.transpose().as_slice().to_vec())
}

/// Least-squares coefficients of `u` on the columns `cols`, or `None` when
/// the columns are linearly dependent.
pub fn least_squares(cols: &[&[f64]], u: &[f64]) -> Option<Vec<f64>> {
    let d = u.len();
    let k = cols.len();
    let a = DMatrix::from_fn(d, k, |i, j| cols[j][i]);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 || svd.singular_values.min() < 1e-10 * smax {
        return None;
    }
    let sol = svd.solve(&DVector::from_column_slice(u), 0.0).ok()?;
    Some(sol.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trip() {
        let a = [2.0, 1.0, 0.0, 0.0, 3.0, 1.0, 1.0, 0.0, 4.0];
        let inv = invert(&a, 3).unwrap();
        let p = matmul(&a, &inv, 3);
        for (x, y) in p.iter().zip(identity(3)) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(invert(&[1.0, 2.0, 2.0, 4.0], 2).is_none());
        assert!(invert(&[0.0], 1).is_none());
    }

    #[test]
    fn transpose_products() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0; 2];
        mat_t_vec(&a, &[1.0, 1.0], &mut out);
        assert_eq!(out, [4.0, 6.0]);
        matvec(&a, &[1.0, 1.0], &mut out);
        assert_eq!(out, [3.0, 7.0]);
    }
}
