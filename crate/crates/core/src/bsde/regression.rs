//! Cross-sectional least squares with several right-hand sides.
//!
//! The normal matrix is accumulated over fixed row chunks in parallel and
//! reduced in chunk order, so results do not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::basis::Basis;
use crate::stats::CHUNK;

/// Largest accepted ratio between the extreme squared Cholesky pivots.
pub const MAX_CONDITION: f64 = 1e13;

/// A factorised design, ready to solve for any number of targets.
pub struct Design {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    rows: Vec<Vec<(usize, f64)>>,
    pub len: usize,
    pub condition: f64,
}

impl Design {
    /// Evaluates `basis` on every feature row and factorises the (optionally
    /// smoothed) normal matrix. Returns `None` when the matrix is singular
    /// or too ill-conditioned.
    pub fn new(basis: &dyn Basis, feats: &[f64], m: usize, ridge: f64) -> Option<Self> {
        let n = feats.len() / m.max(1);
        let n = if m == 0 { feats.len() } else { n };
        let p = basis.len();
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map_init(Vec::new, |buf, i| {
                let f = if m == 0 { &[][..] } else { &feats[i * m..(i + 1) * m] };
                basis.eval(f, buf);
                buf.clone()
            })
            .collect();
        let partial: Vec<Vec<f64>> = rows
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut a = vec![0.0; p * p];
                for r in chunk {
                    for &(i, vi) in r {
                        for &(j, vj) in r {
                            a[i * p + j] += vi * vj;
                        }
                    }
                }
                a
            })
            .collect();
        let mut a = vec![0.0; p * p];
        for part in &partial {
            for (x, y) in a.iter_mut().zip(part) {
                *x += y;
            }
        }
        if ridge > 0.0 {
            let scale = ridge * (0..p).map(|i| a[i * p + i]).sum::<f64>() / p as f64;
            for row in basis.penalty_rows() {
                for &(i, vi) in &row {
                    for &(j, vj) in &row {
                        a[i * p + j] += scale * vi * vj;
                    }
                }
            }
        }
        let mat = DMatrix::from_row_slice(p, p, &a);
        let chol = mat.cholesky()?;
        let diag: Vec<f64> = (0..p).map(|i| chol.l_dirty()[(i, i)].powi(2)).collect();
        let hi = diag.iter().cloned().fold(0.0, f64::max);
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = hi / lo;
        if !(condition.is_finite() && condition < MAX_CONDITION) {
            return None;
        }
        Some(Self {
            chol,
            rows,
            len: p,
            condition,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Coefficients for each target vector (length `n_rows`).
    pub fn solve(&self, targets: &[&[f64]]) -> Vec<Vec<f64>> {
        let p = self.len;
        let r = targets.len();
        let partial: Vec<Vec<f64>> = self
            .rows
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut b = vec![0.0; p * r];
                for (off, row) in chunk.iter().enumerate() {
                    let i = c * CHUNK + off;
                    for (t, target) in targets.iter().enumerate() {
                        let y = target[i];
                        for &(k, v) in row {
                            b[t * p + k] += v * y;
                        }
                    }
                }
                b
            })
            .collect();
        let mut b = vec![0.0; p * r];
        for part in &partial {
            for (x, y) in b.iter_mut().zip(part) {
                *x += y;
            }
        }
        (0..r)
            .map(|t| {
                let rhs = DVector::from_column_slice(&b[t * p..(t + 1) * p]);
                self.chol.solve(&rhs).as_slice().to_vec()
            })
            .collect()
    }

    /// Fitted values `Φ_i · c` at the design rows.
    pub fn fitted(&self, coef: &[f64]) -> Vec<f64> {
        self.rows.par_iter().map(|r| r.iter().map(|&(k, v)| v * coef[k]).sum()).collect()
    }
}

pub fn apply(row: &[(usize, f64)], coef: &[f64]) -> f64 {
    row.iter().map(|&(k, v)| v * coef[k]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::basis::BasisSpec;

    #[test]
    fn recovers_piecewise_linear_target_exactly() {
        let n = 500;
        let feats: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let basis = BasisSpec::local_bins(5).build(&feats, 1, 0).unwrap();
        let design = Design::new(basis.as_ref(), &feats, 1, 0.0).unwrap();
        let y: Vec<f64> = feats.iter().map(|x| 2.0 * x - 1.0).collect();
        let c = design.solve(&[&y]);
        let fit = design.fitted(&c[0]);
        for (a, b) in fit.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn polynomial_fit_of_quadratic() {
        let n = 300;
        let feats: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let basis = BasisSpec::polynomial(2).build(&feats, 1, 0).unwrap();
        let design = Design::new(basis.as_ref(), &feats, 1, 0.0).unwrap();
        let y: Vec<f64> = feats.iter().map(|x| x * x - 4.0 * x + 1.0).collect();
        let fit = design.fitted(&design.solve(&[&y])[0]);
        for (a, b) in fit.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothing_fills_empty_bins() {
        // Data only at the two ends: without the penalty the middle hats
        // are unidentified.
        let feats: Vec<f64> = (0..100).map(|i| if i < 50 { 0.0 } else { 1.0 }).collect();
        let basis = BasisSpec::local_bins(4).build(&feats, 1, 0).unwrap();
        assert!(Design::new(basis.as_ref(), &feats, 1, 0.0).is_none());
        let design = Design::new(basis.as_ref(), &feats, 1, 1e-6).unwrap();
        let y: Vec<f64> = feats.iter().map(|x| 3.0 * x).collect();
        let c = &design.solve(&[&y])[0];
        let mut row = Vec::new();
        basis.eval(&[0.5], &mut row);
        assert!((apply(&row, c) - 1.5).abs() < 1e-6);
    }
}
