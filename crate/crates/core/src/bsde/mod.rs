//! Least-squares Monte Carlo for the penalized BSDE
//!
//! ```text
//! Y_t = U(X) + ∫_t^T n ρ(f_sᵀ (σ_sᵀ)⁻¹ Z_s) ds − ∫_t^T Z_s · dB_s
//! ```
//!
//! on an uncontrolled ensemble. Schemes are registered by name in a
//! [`SchemeRegistry`]; [`solve_penalized`] uses the default (`tilted`).

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{rho, Dynamics, TerminalFunctional};
use crate::pathspace::{History, TimeGrid};
use crate::simulate::Ensemble;
use crate::stats::{self, MeanSe};

pub mod basis;
pub mod regression;
pub mod scheme;

pub use basis::{BasisFamily, BasisSpec, FeatureMap};
pub use scheme::{ExplicitScheme, TiltedScheme};

use basis::Basis;
use regression::Design;

/// Inputs shared by all schemes.
#[derive(Clone, Copy)]
pub struct BsdeProblem<'a> {
    pub model: &'a dyn Dynamics,
    pub terminal: &'a TerminalFunctional,
    pub penalty_n: f64,
    pub ensemble: &'a Ensemble,
    pub basis: &'a BasisSpec,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StepReport {
    pub k: usize,
    pub basis: String,
    pub size: usize,
    pub condition: f64,
    pub fallback_level: usize,
}

#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub grid: TimeGrid,
    pub penalty_n: f64,
    pub scheme: String,
    n_paths: usize,
    dim: usize,
    y: Vec<f64>,
    z: Vec<f64>,
    /// Estimate of `Y_{t_start}` with its Monte Carlo standard error.
    pub y0: MeanSe,
    /// Cross-sectional standard deviation of `Y_{t_start}`.
    pub y0_std: f64,
    pub steps: Vec<StepReport>,
    /// Mean of `ρ(f_kᵀ(σ_kᵀ)⁻¹ Z_k)` per step.
    pub violation: Vec<f64>,
}

impl BsdeSolution {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn y(&self, j: usize, k: usize) -> f64 {
        self.y[j * self.grid.n_nodes() + k]
    }

    pub fn z(&self, j: usize, k: usize) -> &[f64] {
        let off = (j * self.grid.n_steps() + k) * self.dim;
        &self.z[off..off + self.dim]
    }

    pub fn y_slice(&self, k: usize) -> Vec<f64> {
        (0..self.n_paths).map(|j| self.y(j, k)).collect()
    }

    pub fn mean_y(&self, k: usize) -> MeanSe {
        stats::mean_se(&self.y_slice(k))
    }

    /// `n ∫ mean ρ dt`: the penalty paid along the mean path.
    pub fn penalty_paid(&self) -> f64 {
        self.penalty_n * self.grid.dt() * self.violation.iter().sum::<f64>()
    }

    /// Rows `k,t,mean_Y,se_Y,mean_rho_violation`; the terminal row has an
    /// empty violation.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["k", "t", "mean_Y", "se_Y", "mean_rho_violation"])?;
        for k in 0..self.grid.n_nodes() {
            let m = self.mean_y(k);
            let v = self.violation.get(k).map_or(String::new(), f64::to_string);
            wr.write_record([k.to_string(), self.grid.node(k).to_string(), m.mean.to_string(), m.se.to_string(), v])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "scheme": self.scheme,
            "penalty_n": self.penalty_n,
            "y0": self.y0.mean,
            "se": self.y0.se,
            "y0_std": self.y0_std,
            "penalty_paid": self.penalty_paid(),
            "n_paths": self.n_paths,
            "n_steps": self.grid.n_steps(),
        })
    }
}

pub trait BsdeScheme: Send + Sync {
    fn name(&self) -> &'static str;
    fn summary(&self) -> &'static str;
    fn solve(&self, problem: &BsdeProblem<'_>) -> Result<BsdeSolution>;
}

pub struct SchemeRegistry {
    schemes: Vec<Box<dyn BsdeScheme>>,
}

impl Default for SchemeRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

impl SchemeRegistry {
    pub fn with_builtin() -> Self {
        let mut r = Self { schemes: Vec::new() };
        r.register(Box::new(TiltedScheme));
        r.register(Box::new(ExplicitScheme));
        r
    }

    pub fn register(&mut self, s: Box<dyn BsdeScheme>) {
        self.schemes.retain(|x| x.name() != s.name());
        self.schemes.push(s);
    }

    pub fn get(&self, name: &str) -> Result<&dyn BsdeScheme> {
        self.schemes
            .iter()
            .find(|s| s.name() == name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::invalid("scheme", format!("unknown BSDE scheme `{name}` (known: {})", self.names().join(", "))))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.schemes.iter().map(|s| s.name()).collect()
    }
}

pub const DEFAULT_SCHEME: &str = "tilted";

/// Solves with the default scheme.
pub fn solve_penalized(
    model: &dyn Dynamics,
    terminal: &TerminalFunctional,
    penalty_n: f64,
    ensemble: &Ensemble,
    basis: &BasisSpec,
) -> Result<BsdeSolution> {
    solve_with(DEFAULT_SCHEME, model, terminal, penalty_n, ensemble, basis)
}

pub fn solve_with(
    scheme: &str,
    model: &dyn Dynamics,
    terminal: &TerminalFunctional,
    penalty_n: f64,
    ensemble: &Ensemble,
    basis: &BasisSpec,
) -> Result<BsdeSolution> {
    let problem = BsdeProblem {
        model,
        terminal,
        penalty_n,
        ensemble,
        basis,
    };
    SchemeRegistry::with_builtin().get(scheme)?.solve(&problem)
}

/// Entry checks common to all schemes.
fn precheck(p: &BsdeProblem<'_>) -> Result<()> {
    if !(p.penalty_n >= 0.0) || !p.penalty_n.is_finite() {
        return Err(Error::invalid("penalty_n", format!("must be finite and ≥ 0, got {}", p.penalty_n)));
    }
    let e = p.ensemble;
    if e.dim() != p.model.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.model.dim(),
            got: e.dim(),
        });
    }
    let zero_control = (0..e.n_paths().min(64)).all(|j| (0..e.grid().n_steps()).all(|k| e.control(j, k).iter().all(|&c| c == 0.0)));
    if !zero_control && !e.is_weak() {
        return Err(Error::Precondition("the BSDE needs an uncontrolled ensemble".into()));
    }
    let d = e.dim();
    let mut inv = vec![0.0; d * d];
    for k in 0..e.grid().n_steps() {
        if !p.model.vol_inverse(&e.history(0, k), &mut inv) {
            return Err(Error::SingularMatrix {
                what: "volatility",
                step: k,
                t: e.grid().node(k),
            });
        }
    }
    Ok(())
}

/// Features of every path at node `k`, row-major `N × m`.
fn step_features(e: &Ensemble, fm: &FeatureMap, k: usize) -> (Vec<f64>, usize) {
    let m = fm.dim(e.dim());
    let rows: Vec<f64> = (0..e.n_paths())
        .into_par_iter()
        .flat_map_iter(|j| {
            let mut out = vec![0.0; m];
            fm.compute(&e.history(j, k), &mut out);
            out
        })
        .collect();
    (rows, m)
}

/// Builds and factorises a design, coarsening the basis until the normal
/// matrix is usable.
fn fit_step(spec: &BasisSpec, feats: &[f64], m: usize, k: usize) -> Result<(Box<dyn Basis>, Design, StepReport)> {
    let mut level = 0;
    while let Some(b) = spec.build(feats, m, level) {
        if let Some(design) = Design::new(b.as_ref(), feats, m, spec.ridge) {
            if level > 0 {
                log::warn!("step {k}: regression basis coarsened to {} (fallback level {level})", b.describe());
            }
            let rep = StepReport {
                k,
                basis: b.describe(),
                size: design.len,
                condition: design.condition,
                fallback_level: level,
            };
            return Ok((b, design, rep));
        }
        level += 1;
    }
    Err(Error::Regression {
        step: k,
        reason: "normal matrix singular even for the constant basis".into(),
    })
}

/// `(σ⁻¹ f)ᵀ z` written into `out`, given row-major `A = σ⁻¹ f`.
fn constraint_argument(a: &[f64], z: &[f64], out: &mut [f64]) {
    linalg::mat_t_vec(a, z, out);
}

/// `σ_k⁻¹ f_k` for path `j` at node `k`.
fn inv_push(model: &dyn Dynamics, h: &History<'_>, inv: &mut [f64], f: &mut [f64]) -> Vec<f64> {
    let d = model.dim();
    model.vol_inverse(h, inv);
    model.push(h.time(), f);
    linalg::matmul(inv, f, d)
}

/// Mean of `ρ(f_kᵀ(σ_kᵀ)⁻¹ Z_k)` at every step.
pub fn constraint_violation(sol: &BsdeSolution, model: &dyn Dynamics, ensemble: &Ensemble) -> Vec<f64> {
    let d = model.dim();
    (0..sol.grid.n_steps())
        .map(|k| {
            stats::sum_by(sol.n_paths, |j| {
                let mut inv = vec![0.0; d * d];
                let mut f = vec![0.0; d * d];
                let a = inv_push(model, &ensemble.history(j, k), &mut inv, &mut f);
                let mut q = vec![0.0; d];
                constraint_argument(&a, sol.z(j, k), &mut q);
                rho(&q)
            }) / sol.n_paths as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LadderLevel {
    pub level: f64,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PenaltyLadderReport {
    pub levels: Vec<LadderLevel>,
    /// Indices `i` with `Y₀(n_{i+1}) < Y₀(n_i) − 3·SE`.
    pub violations: Vec<usize>,
    /// `Y₀(n_max) − Y₀(n_prev)`.
    pub saturation_gap: f64,
    /// Penalty paid at each level.
    pub penalty_paid: Vec<f64>,
}

impl PenaltyLadderReport {
    pub fn monotone(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Solves along an increasing penalty ladder on one shared ensemble.
pub fn penalty_monotonicity(
    model: &dyn Dynamics,
    terminal: &TerminalFunctional,
    n_list: &[f64],
    ensemble: &Ensemble,
    basis: &BasisSpec,
) -> Result<PenaltyLadderReport> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("penalty_ladder", "levels must be strictly increasing"));
    }
    let mut levels = Vec::with_capacity(n_list.len());
    let mut paid = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let sol = solve_penalized(model, terminal, n, ensemble, basis)?;
        paid.push(sol.penalty_paid());
        levels.push(LadderLevel {
            level: n,
            value: sol.y0.mean,
            se: sol.y0.se,
        });
    }
    let violations = levels
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].value < w[0].value - 3.0 * w[0].se.hypot(w[1].se))
        .map(|(i, _)| i)
        .collect();
    let saturation_gap = match levels.len() {
        0 | 1 => 0.0,
        n => levels[n - 1].value - levels[n - 2].value,
    };
    Ok(PenaltyLadderReport {
        levels,
        violations,
        saturation_gap,
        penalty_paid: paid,
    })
}
