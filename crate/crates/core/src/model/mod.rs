//! Coefficient functionals, constraint geometry and the degenerate
//! perturbation family.
//!
//! All functionals receive a [`History`]: they can see the path up to the
//! current node and nothing after it, which makes non-anticipativity hold by
//! construction. Matrices are row-major `d×d` slices.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::pathspace::{History, Path};

pub mod transaction;
pub mod zoo;

pub type StateFn = Arc<dyn Fn(&History<'_>, &mut [f64]) + Send + Sync>;
pub type TimeFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&History<'_>) -> f64 + Send + Sync>;

/// Forward dynamics `dX = (μ + fν)dt + σ dB`.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;
    fn drift(&self, h: &History<'_>, out: &mut [f64]);
    fn vol(&self, h: &History<'_>, out: &mut [f64]);
    fn push(&self, t: f64, out: &mut [f64]);
    /// Whether μ and σ depend on the current value only.
    fn is_markovian(&self) -> bool;
    /// Declared constant of the linear-growth/Lipschitz bounds.
    fn lipschitz_c(&self) -> f64;

    /// Writes `σ⁻¹` into `out`; returns `false` when σ is singular.
    fn vol_inverse(&self, h: &History<'_>, out: &mut [f64]) -> bool {
        let d = self.dim();
        let mut s = vec![0.0; d * d];
        self.vol(h, &mut s);
        match linalg::invert(&s, d) {
            Some(inv) => {
                out.copy_from_slice(&inv);
                true
            }
            None => false,
        }
    }

    /// True when σ ≡ 0 can be detected cheaply (used to skip noise).
    fn is_deterministic(&self) -> bool {
        false
    }
}

#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim: usize,
    drift: StateFn,
    vol: StateFn,
    push: TimeFn,
    vol_inv: Option<StateFn>,
    lipschitz_c: f64,
    markovian: bool,
    deterministic: bool,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("lipschitz_c", &self.lipschitz_c)
            .field("markovian", &self.markovian)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        drift: impl Fn(&History<'_>, &mut [f64]) + Send + Sync + 'static,
        vol: impl Fn(&History<'_>, &mut [f64]) + Send + Sync + 'static,
        push: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            drift: Arc::new(drift),
            vol: Arc::new(vol),
            push: Arc::new(push),
            vol_inv: None,
            lipschitz_c: 1.0,
            markovian: false,
            deterministic: false,
        }
    }

    /// Constant coefficients; Markovian by construction.
    pub fn constant(name: impl Into<String>, mu: Vec<f64>, sigma: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        let d = mu.len();
        if sigma.len() != d * d {
            return Err(Error::LengthMismatch {
                expected: d * d,
                got: sigma.len(),
            });
        }
        if f.len() != d * d {
            return Err(Error::LengthMismatch {
                expected: d * d,
                got: f.len(),
            });
        }
        let c = linalg::frobenius(&mu) + linalg::frobenius(&sigma);
        let deterministic = sigma.iter().all(|&v| v == 0.0);
        Ok(Self::new(
            name,
            d,
            move |_, out| out.copy_from_slice(&mu),
            move |_, out| out.copy_from_slice(&sigma),
            move |_, out| out.copy_from_slice(&f),
        )
        .with_lipschitz(c.max(1.0))
        .markovian(true)
        .deterministic(deterministic))
    }

    pub fn with_lipschitz(mut self, c: f64) -> Self {
        self.lipschitz_c = c;
        self
    }

    pub fn markovian(mut self, yes: bool) -> Self {
        self.markovian = yes;
        self
    }

    pub fn deterministic(mut self, yes: bool) -> Self {
        self.deterministic = yes;
        self
    }

    pub fn with_vol_inverse(mut self, inv: impl Fn(&History<'_>, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.vol_inv = Some(Arc::new(inv));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn constraint_set(&self) -> ConstraintSet {
        ConstraintSet {
            dim: self.dim,
            f: self.push.clone(),
        }
    }
}

impl Dynamics for ModelSpec {
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, h: &History<'_>, out: &mut [f64]) {
        (self.drift)(h, out)
    }
    fn vol(&self, h: &History<'_>, out: &mut [f64]) {
        (self.vol)(h, out)
    }
    fn push(&self, t: f64, out: &mut [f64]) {
        (self.push)(t, out)
    }
    fn is_markovian(&self) -> bool {
        self.markovian
    }
    fn lipschitz_c(&self) -> f64 {
        self.lipschitz_c
    }
    fn vol_inverse(&self, h: &History<'_>, out: &mut [f64]) -> bool {
        match &self.vol_inv {
            Some(inv) => {
                inv(h, out);
                true
            }
            None => {
                let mut s = vec![0.0; self.dim * self.dim];
                self.vol(h, &mut s);
                linalg::invert(&s, self.dim).map(|i| out.copy_from_slice(&i)).is_some()
            }
        }
    }
    fn is_deterministic(&self) -> bool {
        self.deterministic
    }
}

/// `σ^p = η^p M + σ`: the base model with a vanishing non-degenerate noise.
#[derive(Clone)]
pub struct PerturbedModel {
    base: ModelSpec,
    eta: ScalarFn,
    m: TimeFn,
    p: f64,
    vol_inv: Option<StateFn>,
}

impl fmt::Debug for PerturbedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbedModel")
            .field("base", &self.base)
            .field("p", &self.p)
            .finish_non_exhaustive()
    }
}

impl PerturbedModel {
    pub fn new(
        base: ModelSpec,
        eta: impl Fn(&History<'_>) -> f64 + Send + Sync + 'static,
        m: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
        p: f64,
    ) -> Result<Self> {
        if !(p > 0.0) {
            return Err(Error::invalid("p", format!("perturbation index must be positive, got {p}")));
        }
        Ok(Self {
            base,
            eta: Arc::new(eta),
            m: Arc::new(m),
            p,
            vol_inv: None,
        })
    }

    pub fn with_vol_inverse(mut self, inv: impl Fn(&History<'_>, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.vol_inv = Some(Arc::new(inv));
        self
    }

    pub fn base(&self) -> &ModelSpec {
        &self.base
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn eta(&self, h: &History<'_>) -> f64 {
        (self.eta)(h)
    }

    pub fn m_at(&self, t: f64) -> Vec<f64> {
        let d = self.base.dim;
        let mut out = vec![0.0; d * d];
        (self.m)(t, &mut out);
        out
    }

    pub fn constraint_set(&self) -> ConstraintSet {
        self.base.constraint_set()
    }
}

impl Dynamics for PerturbedModel {
    fn dim(&self) -> usize {
        self.base.dim
    }
    fn drift(&self, h: &History<'_>, out: &mut [f64]) {
        self.base.drift(h, out)
    }
    fn vol(&self, h: &History<'_>, out: &mut [f64]) {
        self.base.vol(h, out);
        let eta = self.eta(h);
        if eta != 0.0 {
            let m = self.m_at(h.time());
            for (o, mv) in out.iter_mut().zip(m) {
                *o += eta * mv;
            }
        }
    }
    fn push(&self, t: f64, out: &mut [f64]) {
        self.base.push(t, out)
    }
    fn is_markovian(&self) -> bool {
        self.base.markovian
    }
    fn lipschitz_c(&self) -> f64 {
        self.base.lipschitz_c
    }
    fn vol_inverse(&self, h: &History<'_>, out: &mut [f64]) -> bool {
        match &self.vol_inv {
            Some(inv) => {
                inv(h, out);
                true
            }
            None => {
                let d = self.base.dim;
                let mut s = vec![0.0; d * d];
                self.vol(h, &mut s);
                linalg::invert(&s, d).map(|i| out.copy_from_slice(&i)).is_some()
            }
        }
    }
}

/// `σ^p_t(x)` as a matrix, checked for invertibility.
pub fn perturbed_sigma(pm: &PerturbedModel, h: &History<'_>) -> Result<DMatrix<f64>> {
    let d = pm.dim();
    let mut s = vec![0.0; d * d];
    pm.vol(h, &mut s);
    if linalg::invert(&s, d).is_none() {
        return Err(Error::PerturbationInvalid { t: h.time(), p: pm.p });
    }
    Ok(DMatrix::from_row_slice(d, d, &s))
}

/// `(σ^p_t(x))⁻¹`, using the model's closed form when it has one.
pub fn perturbed_sigma_inverse(pm: &PerturbedModel, h: &History<'_>) -> Result<DMatrix<f64>> {
    let d = pm.dim();
    let mut out = vec![0.0; d * d];
    if !pm.vol_inverse(h, &mut out) {
        return Err(Error::PerturbationInvalid { t: h.time(), p: pm.p });
    }
    Ok(DMatrix::from_row_slice(d, d, &out))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PerturbationReport {
    pub samples: usize,
    pub max_eta: f64,
    /// Largest eigenvalue of the symmetrised `Mσᵀ + σM` over the samples.
    pub max_cross_eigenvalue: f64,
    /// Largest `‖(σ^p)⁻¹ f‖_F` over the samples.
    pub max_inv_push_norm: f64,
}

/// Checks the perturbation assumptions on sampled histories: η ≤ 0,
/// invertible σ^p, bounded `(σ^p)⁻¹ f` and negative `Mσᵀ + σM`.
pub fn check_perturbation(pm: &PerturbedModel, samples: &[History<'_>]) -> Result<PerturbationReport> {
    let d = pm.dim();
    let mut rep = PerturbationReport {
        samples: samples.len(),
        max_eta: f64::NEG_INFINITY,
        max_cross_eigenvalue: f64::NEG_INFINITY,
        max_inv_push_norm: 0.0,
    };
    let mut sigma = vec![0.0; d * d];
    let mut f = vec![0.0; d * d];
    for h in samples {
        let eta = pm.eta(h);
        if eta > 0.0 {
            return Err(Error::Precondition(format!("η = {eta} > 0 at t = {}", h.time())));
        }
        rep.max_eta = rep.max_eta.max(eta);
        let inv = perturbed_sigma_inverse(pm, h)?;
        pm.push(h.time(), &mut f);
        let fm = DMatrix::from_row_slice(d, d, &f);
        rep.max_inv_push_norm = rep.max_inv_push_norm.max((inv * fm).norm());
        pm.base.vol(h, &mut sigma);
        let s = DMatrix::from_row_slice(d, d, &sigma);
        let m = DMatrix::from_row_slice(d, d, &pm.m_at(h.time()));
        let cross = &m * s.transpose() + &s * &m;
        let sym = (&cross + cross.transpose()) * 0.5;
        let top = sym.symmetric_eigenvalues().max();
        rep.max_cross_eigenvalue = rep.max_cross_eigenvalue.max(top);
    }
    Ok(rep)
}

/// The constraint cone `𝔎_t = {q : f_tᵀ q ≤ 0}` through its matrix `f`.
#[derive(Clone)]
pub struct ConstraintSet {
    dim: usize,
    f: TimeFn,
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSet").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl ConstraintSet {
    pub fn new(dim: usize, f: impl Fn(f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        Self { dim, f: Arc::new(f) }
    }

    pub fn constant(dim: usize, f: Vec<f64>) -> Result<Self> {
        if f.len() != dim * dim {
            return Err(Error::LengthMismatch {
                expected: dim * dim,
                got: f.len(),
            });
        }
        Ok(Self::new(dim, move |_, out| out.copy_from_slice(&f)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn f_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        (self.f)(t, &mut out);
        out
    }

    /// Nonzero columns of `f_t`; they generate the polar cone of `𝔎_t`.
    pub fn generators(&self, t: f64) -> Vec<Vec<f64>> {
        let f = self.f_at(t);
        let d = self.dim;
        (0..d)
            .map(|j| (0..d).map(|i| f[i * d + j]).collect::<Vec<_>>())
            .filter(|c: &Vec<f64>| c.iter().any(|&v| v != 0.0))
            .collect()
    }
}

/// `ρ(q) = q⁺ · 𝟏`.
pub fn rho(q: &[f64]) -> f64 {
    q.iter().map(|v| v.max(0.0)).sum()
}

pub fn in_constraint_cone(q: &[f64], t: f64, cs: &ConstraintSet) -> bool {
    let f = cs.f_at(t);
    let mut ftq = vec![0.0; cs.dim];
    linalg::mat_t_vec(&f, q, &mut ftq);
    ftq.iter().all(|&v| v <= 0.0)
}

/// Nonnegative coefficients expressing `u` in the cone generated by `gens`,
/// or `None` when `u` lies outside it.
///
/// By Carathéodory it is enough to look at linearly independent subsets of
/// generators; for each one the unique least-squares solution is tested for
/// zero residual and nonnegativity.
pub fn cone_coefficients(u: &[f64], gens: &[Vec<f64>]) -> Option<Vec<f64>> {
    let scale = 1.0 + crate::pathspace::norm(u);
    let tol = 1e-10 * scale;
    if u.iter().all(|v| v.abs() <= tol) {
        return Some(vec![0.0; gens.len()]);
    }
    let k = gens.len();
    for mask in 1u32..(1 << k) {
        let idx: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        if idx.len() > u.len() {
            continue;
        }
        let cols: Vec<&[f64]> = idx.iter().map(|&i| gens[i].as_slice()).collect();
        let Some(lam) = linalg::least_squares(&cols, u) else {
            continue;
        };
        if lam.iter().any(|&l| l < -1e-12 * scale) {
            continue;
        }
        let resid: f64 = (0..u.len())
            .map(|r| {
                let fit: f64 = cols.iter().zip(&lam).map(|(c, l)| c[r] * l).sum();
                (u[r] - fit).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        if resid <= tol {
            let mut full = vec![0.0; k];
            for (&i, l) in idx.iter().zip(lam) {
                full[i] = l.max(0.0);
            }
            return Some(full);
        }
    }
    None
}

/// `δ_t(u) = sup{k·u : k ∈ 𝔎_t}`: `0` on the polar cone, `+∞` elsewhere.
pub fn support_function(u: &[f64], t: f64, cs: &ConstraintSet) -> f64 {
    if cone_coefficients(u, &cs.generators(t)).is_some() {
        0.0
    } else {
        f64::INFINITY
    }
}

pub type MarkovPayoff = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type PathPayoff = Arc<dyn Fn(&History<'_>) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Payoff {
    Markov(MarkovPayoff),
    Path(PathPayoff),
}

/// Terminal reward `U`, with the growth exponent and constant of its local
/// Lipschitz bound `|U(x)−U(x')| ≤ C(1+‖x‖^r+‖x'‖^r)‖x−x'‖`.
#[derive(Clone)]
pub struct TerminalFunctional {
    name: String,
    payoff: Payoff,
    growth_r: f64,
    lipschitz_c: f64,
}

impl fmt::Debug for TerminalFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalFunctional")
            .field("name", &self.name)
            .field("markovian", &self.is_markovian())
            .field("growth_r", &self.growth_r)
            .finish()
    }
}

impl TerminalFunctional {
    pub fn markov(name: impl Into<String>, u: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            payoff: Payoff::Markov(Arc::new(u)),
            growth_r: 0.0,
            lipschitz_c: 1.0,
        }
    }

    pub fn path(name: impl Into<String>, u: impl Fn(&History<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            payoff: Payoff::Path(Arc::new(u)),
            growth_r: 0.0,
            lipschitz_c: 1.0,
        }
    }

    pub fn with_growth(mut self, r: f64, c: f64) -> Self {
        self.growth_r = r;
        self.lipschitz_c = c;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn growth_r(&self) -> f64 {
        self.growth_r
    }

    pub fn lipschitz_c(&self) -> f64 {
        self.lipschitz_c
    }

    pub fn is_markovian(&self) -> bool {
        matches!(self.payoff, Payoff::Markov(_))
    }

    /// Evaluates `U` on a terminal history.
    pub fn eval(&self, h: &History<'_>) -> f64 {
        match &self.payoff {
            Payoff::Markov(u) => u(h.current()),
            Payoff::Path(u) => u(h),
        }
    }

    pub fn eval_path(&self, p: &Path) -> f64 {
        self.eval(&p.history(p.grid().n_steps()))
    }

    pub fn eval_state(&self, x: &[f64]) -> Result<f64> {
        match &self.payoff {
            Payoff::Markov(u) => Ok(u(x)),
            Payoff::Path(_) => Err(Error::NotMarkovian(format!("terminal functional `{}`", self.name))),
        }
    }

    pub fn markov_fn(&self) -> Option<MarkovPayoff> {
        match &self.payoff {
            Payoff::Markov(u) => Some(u.clone()),
            Payoff::Path(_) => None,
        }
    }

    /// `c·U`.
    pub fn scaled(&self, c: f64) -> Self {
        let payoff = match &self.payoff {
            Payoff::Markov(u) => {
                let u = u.clone();
                Payoff::Markov(Arc::new(move |x: &[f64]| c * u(x)))
            }
            Payoff::Path(u) => {
                let u = u.clone();
                Payoff::Path(Arc::new(move |h: &History<'_>| c * u(h)))
            }
        };
        Self {
            name: format!("{}*{c}", self.name),
            payoff,
            growth_r: self.growth_r,
            lipschitz_c: self.lipschitz_c * c.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GrowthReport {
    pub declared_c: f64,
    /// `max (‖μ‖+‖σ‖)/(1+‖x‖_{∞,t})`.
    pub growth_ratio: f64,
    /// `max (‖Δμ‖+‖Δσ‖)/‖x−x'‖_{∞,t}` over the sampled pairs.
    pub lipschitz_ratio: f64,
}

impl GrowthReport {
    pub fn holds(&self) -> bool {
        self.growth_ratio <= self.declared_c && self.lipschitz_ratio <= self.declared_c
    }
}

/// Empirical check of the declared growth and Lipschitz constants on sampled
/// paths; consecutive paths are paired for the Lipschitz ratio.
pub fn check_growth(model: &dyn Dynamics, paths: &[Path]) -> GrowthReport {
    let d = model.dim();
    let (mut mu, mut mu2) = (vec![0.0; d], vec![0.0; d]);
    let (mut s, mut s2) = (vec![0.0; d * d], vec![0.0; d * d]);
    let mut growth: f64 = 0.0;
    let mut lip: f64 = 0.0;
    for (i, p) in paths.iter().enumerate() {
        let other = &paths[(i + 1) % paths.len()];
        for k in 0..p.grid().n_nodes() {
            let h = p.history(k);
            model.drift(&h, &mut mu);
            model.vol(&h, &mut s);
            growth = growth.max((linalg::frobenius(&mu) + linalg::frobenius(&s)) / (1.0 + h.sup_norm()));
            if other.grid() == p.grid() && k < other.grid().n_nodes() {
                let h2 = other.history(k);
                model.drift(&h2, &mut mu2);
                model.vol(&h2, &mut s2);
                let mut dist: f64 = 0.0;
                for i in 0..=k {
                    let a = p.node(i);
                    let b = other.node(i);
                    let dd: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    dist = dist.max(dd.sqrt());
                }
                if dist > 0.0 {
                    let dm: f64 = mu.iter().zip(&mu2).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    let ds: f64 = s.iter().zip(&s2).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    lip = lip.max((dm + ds) / dist);
                }
            }
        }
    }
    GrowthReport {
        declared_c: model.lipschitz_c(),
        growth_ratio: growth,
        lipschitz_ratio: lip,
    }
}

/// Largest observed `|U(x)−U(x')| / ((1+‖x‖^r+‖x'‖^r)‖x−x'‖_∞)` over pairs
/// of sampled paths.
pub fn terminal_lipschitz_ratio(u: &TerminalFunctional, paths: &[Path]) -> f64 {
    let mut worst: f64 = 0.0;
    for w in paths.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.grid() != b.grid() {
            continue;
        }
        let na = a.history(a.grid().n_steps()).sup_norm();
        let nb = b.history(b.grid().n_steps()).sup_norm();
        let mut dist: f64 = 0.0;
        for k in 0..a.grid().n_nodes() {
            let dd: f64 = a.node(k).iter().zip(b.node(k)).map(|(x, y)| (x - y) * (x - y)).sum();
            dist = dist.max(dd.sqrt());
        }
        if dist == 0.0 {
            continue;
        }
        let r = u.growth_r;
        let diff = (u.eval_path(a) - u.eval_path(b)).abs();
        worst = worst.max(diff / ((1.0 + na.powf(r) + nb.powf(r)) * dist));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathspace::TimeGrid;

    fn identity_cone(d: usize) -> ConstraintSet {
        ConstraintSet::constant(d, linalg::identity(d)).unwrap()
    }

    #[test]
    fn rho_examples() {
        assert_eq!(rho(&[1.0, -2.0]), 1.0);
        assert_eq!(rho(&[0.0, 0.0]), 0.0);
        assert_eq!(rho(&[2.0, 3.0, -1.0]), 5.0);
    }

    #[test]
    fn cone_examples() {
        let cs = identity_cone(2);
        assert!(in_constraint_cone(&[-1.0, -2.0], 0.0, &cs));
        assert!(!in_constraint_cone(&[0.1, -1.0], 0.0, &cs));
        let tc = transaction::transaction_constraint(0.1);
        assert!(in_constraint_cone(&[1.0, 1.0, 0.0], 0.0, &tc));
    }

    #[test]
    fn support_function_examples() {
        let cs = identity_cone(2);
        assert_eq!(support_function(&[0.0, 0.0], 0.0, &cs), 0.0);
        assert_eq!(support_function(&[1.0, 2.0], 0.0, &cs), 0.0);
        assert_eq!(support_function(&[-1.0, 0.0], 0.0, &cs), f64::INFINITY);
    }

    #[test]
    fn support_function_on_degenerate_transaction_cone() {
        let tc = transaction::transaction_constraint(0.1);
        // f·(1, 0) and f·(0, 1) are the two generators.
        assert_eq!(support_function(&[1.0, -1.1, 0.0], 0.0, &tc), 0.0);
        assert_eq!(support_function(&[-1.1, 1.0, 0.0], 0.0, &tc), 0.0);
        assert_eq!(support_function(&[0.0, 0.0, 1.0], 0.0, &tc), f64::INFINITY);
        assert_eq!(support_function(&[1.0, 1.0, 0.0], 0.0, &tc), f64::INFINITY);
        assert_eq!(support_function(&[-1.0, -1.0, 0.0], 0.0, &tc), 0.0);
    }

    #[test]
    fn perturbed_sigma_examples() {
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let path = Path::constant(grid, &[0.3, -0.2]).unwrap();
        let h = path.history(2);
        let base = ModelSpec::constant("b", vec![0.0; 2], vec![1.0, 0.5, 0.0, 2.0], linalg::identity(2)).unwrap();
        let pm = PerturbedModel::new(base, |_| 0.0, |_, m| m.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]), 1.0).unwrap();
        let s = perturbed_sigma(&pm, &h).unwrap();
        assert_eq!(s.as_slice(), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]).as_slice());

        let zero = ModelSpec::constant("z", vec![0.0; 2], vec![0.0; 4], linalg::identity(2)).unwrap();
        let pm = PerturbedModel::new(zero.clone(), |_| -1.0, |_, m| m.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]), 1.0).unwrap();
        let s = perturbed_sigma(&pm, &h).unwrap();
        assert_eq!(s.as_slice(), &[-1.0, 0.0, 0.0, -1.0]);

        let bad = PerturbedModel::new(zero, |_| 0.0, |_, m| m.fill(0.0), 3.0).unwrap();
        match perturbed_sigma(&bad, &h) {
            Err(Error::PerturbationInvalid { t, p }) => {
                assert_eq!(t, 0.5);
                assert_eq!(p, 3.0);
            }
            other => panic!("expected perturbation error, got {other:?}"),
        }
    }

    #[test]
    fn scaled_terminal() {
        let u = TerminalFunctional::markov("sq", |x| x[0] * x[0]).scaled(3.0);
        assert_eq!(u.eval_state(&[2.0]).unwrap(), 12.0);
        let p = TerminalFunctional::path("max", |h| h.running_max(0));
        assert!(matches!(p.eval_state(&[1.0]), Err(Error::NotMarkovian(_))));
    }
}
