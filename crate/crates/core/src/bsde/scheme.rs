//! Backward recursions.
//!
//! `tilted` (default): the driver `nρ(fᵀσ⁻ᵀz)` is the maximum of the linear
//! maps `z ↦ (σ⁻¹fν)·z` over the vertices `ν ∈ {0, n}^d`. Each branch is
//! applied exactly as a one-step Girsanov tilt, which moves `X_{k+1}` by
//! `f ν Δ`; so
//!
//! ```text
//! Y_k = max_ν E_k[ y_{k+1}(X_{≤k}, X_{k+1} + f_k ν Δ) ].
//! ```
//!
//! `y_{k+1}` is kept as a function (fitted basis plus one coefficient set per
//! branch) so it can be evaluated at the shifted states. Every branch is a
//! conditional expectation, which keeps the scheme monotone for any `nΔ`.
//!
//! `explicit`: `Y_k = E_k[Y_{k+1}] + Δ n ρ(f_kᵀ(σ_kᵀ)⁻¹ Z_k)` with `Z_k` from
//! the Brownian-increment regression. It is only monotone once
//! `n√Δ` is small.

use rayon::prelude::*;

use super::basis::Basis;
use super::regression::{apply, Design};
use super::{constraint_violation, fit_step, inv_push, precheck, step_features, BsdeProblem, BsdeScheme, BsdeSolution};
use crate::error::Result;
use crate::model::rho;
use crate::pathspace::History;
use crate::stats::{self, MeanSe};

pub struct TiltedScheme;
pub struct ExplicitScheme;

enum NextValue {
    Terminal,
    Fitted { basis: Box<dyn Basis>, coefs: Vec<Vec<f64>> },
}

struct Eval<'p, 'a> {
    p: &'p BsdeProblem<'a>,
    m: usize,
}

impl Eval<'_, '_> {
    /// `y_{k1}` on path `j` with `X_{k1}` moved by `shift`.
    fn next_value(
        &self,
        next: &NextValue,
        j: usize,
        k1: usize,
        shift: &[f64],
        cur: &mut [f64],
        feat: &mut [f64],
        row: &mut Vec<(usize, f64)>,
    ) -> f64 {
        let e = self.p.ensemble;
        let d = e.dim();
        let s = e.path_values(j);
        for i in 0..d {
            cur[i] = s[k1 * d + i] + shift[i];
        }
        let g = e.grid();
        let h = History::new(e.prefix(), g.t_start(), g.dt(), &s[..k1 * d], cur);
        match next {
            NextValue::Terminal => self.p.terminal.eval(&h),
            NextValue::Fitted { basis, coefs } => {
                self.p.basis.features.compute(&h, &mut feat[..self.m]);
                basis.eval(feat, row);
                coefs.iter().map(|c| apply(row, c)).fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }
}

/// Distinct shifts `f_k ν Δ` over `ν ∈ {0, n}^d`, zero first; among equal
/// shifts the first (smallest control) is kept.
fn branch_shifts(p: &BsdeProblem<'_>, k: usize) -> Vec<Vec<f64>> {
    let d = p.model.dim();
    let g = p.ensemble.grid();
    let mut f = vec![0.0; d * d];
    p.model.push(g.node(k), &mut f);
    let mut out: Vec<Vec<f64>> = Vec::new();
    let masks = if p.penalty_n == 0.0 { 1 } else { 1usize << d };
    for mask in 0..masks {
        let nu: Vec<f64> = (0..d).map(|i| if mask & (1 << i) != 0 { p.penalty_n } else { 0.0 }).collect();
        let mut shift = vec![0.0; d];
        crate::linalg::matvec(&f, &nu, &mut shift);
        for v in shift.iter_mut() {
            *v *= g.dt();
        }
        if !out.iter().any(|s| s == &shift) {
            out.push(shift);
        }
    }
    out
}

/// Regresses `(Y_{k+1} − Ê_k Y_{k+1}) ΔB_k / Δ` for every component.
fn z_regression(p: &BsdeProblem<'_>, design: &Design, y_next: &[f64], y_next_fit: &[f64], k: usize) -> Vec<Vec<f64>> {
    let e = p.ensemble;
    let d = e.dim();
    let dt = e.grid().dt();
    let targets: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..e.n_paths())
                .into_par_iter()
                .map(|j| (y_next[j] - y_next_fit[j]) * e.increment(j, k)[i] / dt)
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
    let coefs = design.solve(&refs);
    coefs.iter().map(|c| design.fitted(c)).collect()
}

struct Workspace {
    y: Vec<f64>,
    z: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, nodes: usize, steps: usize, d: usize) -> Self {
        Self {
            y: vec![0.0; n * nodes],
            z: vec![0.0; n * steps * d],
        }
    }
}

/// `U` on every path. Its standard error floors the reported SE of `Y₀`:
/// exact for `n = 0`, where the regressions telescope to the sample mean.
fn terminal_slice(p: &BsdeProblem<'_>) -> Vec<f64> {
    p.ensemble.terminal_values(p.terminal)
}

fn finish(p: &BsdeProblem<'_>, name: &str, ws: Workspace, y0: MeanSe, steps: Vec<super::StepReport>) -> BsdeSolution {
    let e = p.ensemble;
    let nodes = e.grid().n_nodes();
    let y0_slice: Vec<f64> = (0..e.n_paths()).map(|j| ws.y[j * nodes]).collect();
    let y0_std = stats::mean_se(&y0_slice).std();
    let mut sol = BsdeSolution {
        grid: *e.grid(),
        penalty_n: p.penalty_n,
        scheme: name.to_string(),
        n_paths: e.n_paths(),
        dim: e.dim(),
        y: ws.y,
        z: ws.z,
        y0,
        y0_std,
        steps,
        violation: Vec::new(),
    };
    sol.violation = constraint_violation(&sol, p.model, e);
    sol
}

impl BsdeScheme for TiltedScheme {
    fn name(&self) -> &'static str {
        "tilted"
    }

    fn summary(&self) -> &'static str {
        "max over bang-bang branches, each an exact one-step Girsanov shift"
    }

    fn solve(&self, p: &BsdeProblem<'_>) -> Result<BsdeSolution> {
        precheck(p)?;
        let e = p.ensemble;
        let (n, d) = (e.n_paths(), e.dim());
        let g = *e.grid();
        let kk = g.n_steps();
        let nodes = g.n_nodes();
        let m = p.basis.features.dim(d);
        let ev = Eval { p, m };
        let mut ws = Workspace::new(n, nodes, kk, d);
        let u = terminal_slice(p);
        let u_se = stats::mean_se(&u).se;
        for j in 0..n {
            ws.y[j * nodes + kk] = u[j];
        }
        let mut next = NextValue::Terminal;
        let mut reports = Vec::with_capacity(kk);
        let mut y0 = MeanSe {
            mean: f64::NAN,
            se: f64::NAN,
            n,
        };
        for k in (0..kk).rev() {
            let (feats, _) = step_features(e, &p.basis.features, k);
            let (basis, design, rep) = fit_step(p.basis, &feats, m, k)?;
            reports.push(rep);
            let shifts = branch_shifts(p, k);
            let mut targets: Vec<Vec<f64>> = shifts
                .iter()
                .map(|shift| {
                    (0..n)
                        .into_par_iter()
                        .map_init(
                            || (vec![0.0; d], vec![0.0; m.max(1)], Vec::new()),
                            |(cur, feat, row), j| ev.next_value(&next, j, k + 1, shift, cur, feat, row),
                        )
                        .collect()
                })
                .collect();
            let y_next: Vec<f64> = (0..n).map(|j| ws.y[j * nodes + k + 1]).collect();
            targets.push(y_next.clone());
            let refs: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
            let mut coefs = design.solve(&refs);
            let y_next_coef = coefs.pop().expect("continuation coefficients");
            let fitted: Vec<Vec<f64>> = coefs.iter().map(|c| design.fitted(c)).collect();
            let mut chosen = vec![0usize; n];
            for j in 0..n {
                let mut best = 0;
                for b in 1..fitted.len() {
                    if fitted[b][j] > fitted[best][j] {
                        best = b;
                    }
                }
                chosen[j] = best;
                ws.y[j * nodes + k] = fitted[best][j];
            }
            let y_next_fit = design.fitted(&y_next_coef);
            let z = z_regression(p, &design, &y_next, &y_next_fit, k);
            for j in 0..n {
                for i in 0..d {
                    ws.z[(j * kk + k) * d + i] = z[i][j];
                }
            }
            if k == 0 {
                let b = chosen[0];
                let se = stats::mean_se(&targets[b]).se.max(u_se);
                let mean = stats::sum_by(n, |j| ws.y[j * nodes]) / n as f64;
                y0 = MeanSe { mean, se, n };
            }
            next = NextValue::Fitted { basis, coefs };
        }
        reports.reverse();
        Ok(finish(p, self.name(), ws, y0, reports))
    }
}

impl BsdeScheme for ExplicitScheme {
    fn name(&self) -> &'static str {
        "explicit"
    }

    fn summary(&self) -> &'static str {
        "one-step explicit scheme, driver evaluated at the regressed Z"
    }

    fn solve(&self, p: &BsdeProblem<'_>) -> Result<BsdeSolution> {
        precheck(p)?;
        let e = p.ensemble;
        let (n, d) = (e.n_paths(), e.dim());
        let g = *e.grid();
        let kk = g.n_steps();
        let nodes = g.n_nodes();
        let dt = g.dt();
        let m = p.basis.features.dim(d);
        let mut ws = Workspace::new(n, nodes, kk, d);
        let u = terminal_slice(p);
        let u_se = stats::mean_se(&u).se;
        for j in 0..n {
            ws.y[j * nodes + kk] = u[j];
        }
        let mut reports = Vec::with_capacity(kk);
        let mut y0 = MeanSe {
            mean: f64::NAN,
            se: f64::NAN,
            n,
        };
        for k in (0..kk).rev() {
            let (feats, _) = step_features(e, &p.basis.features, k);
            let (_, design, rep) = fit_step(p.basis, &feats, m, k)?;
            reports.push(rep);
            let y_next: Vec<f64> = (0..n).map(|j| ws.y[j * nodes + k + 1]).collect();
            let c = design.solve(&[&y_next]);
            let cont = design.fitted(&c[0]);
            let z = z_regression(p, &design, &y_next, &cont, k);
            let yk: Vec<f64> = (0..n)
                .into_par_iter()
                .map_init(
                    || (vec![0.0; d * d], vec![0.0; d * d], vec![0.0; d], vec![0.0; d]),
                    |(inv, f, zj, q), j| {
                        let a = inv_push(p.model, &e.history(j, k), inv, f);
                        for i in 0..d {
                            zj[i] = z[i][j];
                        }
                        super::constraint_argument(&a, zj, q);
                        cont[j] + dt * p.penalty_n * rho(q)
                    },
                )
                .collect();
            for j in 0..n {
                ws.y[j * nodes + k] = yk[j];
                for i in 0..d {
                    ws.z[(j * kk + k) * d + i] = z[i][j];
                }
            }
            if k == 0 {
                let mean = stats::sum_by(n, |j| yk[j]) / n as f64;
                y0 = MeanSe {
                    mean,
                    se: stats::mean_se(&y_next).se.max(u_se),
                    n,
                };
            }
        }
        reports.reverse();
        Ok(finish(p, self.name(), ws, y0, reports))
    }
}
