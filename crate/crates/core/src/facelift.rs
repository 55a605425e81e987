//! Face-lift of a Markovian payoff and the auxiliary problem whose controls
//! move the state inside the polar cone at cost `δ`.
//!
//! ```text
//! Û(x) = sup { U(x + u) − δ(u) : u ∈ polar cone } = sup_{c ≥ 0} U(x + Σ cᵢ gᵢ)
//! ```
//!
//! where `gᵢ` are the non-zero columns of `f_T`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::control::grid_dp::{solve_grid_dp, DpSolution, GridDpSpec, LevelRule, Timing};
use crate::control::{Method, ValueEstimate};
use crate::error::{Error, Result};
use crate::model::{support_function, ConstraintSet, Dynamics, MarkovPayoff, TerminalFunctional};
use crate::pathspace::TimeGrid;

const GOLDEN: f64 = 0.618_033_988_749_894_9;
/// Beyond this many coarse points the search starts from `c = 0` only.
const MAX_COARSE: usize = 1_000_000;

#[derive(Clone)]
pub struct FaceliftSpec {
    pub payoff: MarkovPayoff,
    pub constraint: ConstraintSet,
    /// Time at which the directions `f_T` are read.
    pub horizon: f64,
    /// Upper bound for every cone coefficient.
    pub search_radius: f64,
    /// Coarse points per cone coefficient, including 0 and the radius.
    pub search_points: usize,
    /// Stopping tolerance of the local refinement.
    pub tol: f64,
}

impl fmt::Debug for FaceliftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FaceliftSpec")
            .field("constraint", &self.constraint)
            .field("horizon", &self.horizon)
            .field("search_radius", &self.search_radius)
            .field("search_points", &self.search_points)
            .finish_non_exhaustive()
    }
}

impl FaceliftSpec {
    pub fn new(payoff: MarkovPayoff, constraint: ConstraintSet, horizon: f64) -> Self {
        Self {
            payoff,
            constraint,
            horizon,
            search_radius: 8.0,
            search_points: 33,
            tol: 1e-12,
        }
    }

    pub fn from_terminal(terminal: &TerminalFunctional, constraint: ConstraintSet, horizon: f64) -> Result<Self> {
        let payoff = terminal
            .markov_fn()
            .ok_or_else(|| Error::NotMarkovian(format!("face-lift of `{}`", terminal.name())))?;
        Ok(Self::new(payoff, constraint, horizon))
    }

    pub fn with_search(mut self, radius: f64, points: usize) -> Self {
        self.search_radius = radius;
        self.search_points = points;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.search_radius > 0.0) {
            return Err(Error::invalid("search_radius", "must be positive"));
        }
        if self.search_points < 2 {
            return Err(Error::invalid("search_points", "need at least 2"));
        }
        Ok(())
    }

    /// The face-lifted payoff as a terminal functional.
    pub fn lifted_terminal(&self) -> TerminalFunctional {
        let spec = self.clone();
        TerminalFunctional::markov("facelift", move |x| facelift(&spec, x).map(|v| v.value).unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaceliftValue {
    pub value: f64,
    /// The maximising shift `u` in the polar cone.
    pub argmax: Vec<f64>,
    /// Its coefficients on the cone generators.
    pub coefficients: Vec<f64>,
    /// The objective still increased at the search radius.
    pub unbounded: bool,
}

/// Maximises `c ↦ U(x + G c)` over `[0, R]^m`: coarse grid, then
/// coordinate-wise golden-section refinement around the best point. Ties
/// keep the earlier (smaller) coefficients.
pub fn facelift(spec: &FaceliftSpec, x: &[f64]) -> Result<FaceliftValue> {
    spec.validate()?;
    if x.len() != spec.constraint.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.constraint.dim(),
            got: x.len(),
        });
    }
    let gens = spec.constraint.generators(spec.horizon);
    let m = gens.len();
    let d = x.len();
    let mut y = vec![0.0; d];
    let mut objective = |c: &[f64]| {
        y.copy_from_slice(x);
        for (g, ci) in gens.iter().zip(c) {
            for i in 0..d {
                y[i] += ci * g[i];
            }
        }
        (spec.payoff)(&y)
    };
    let r = spec.search_radius;
    let p = spec.search_points;
    let step = r / (p - 1) as f64;
    let mut best_c = vec![0.0; m];
    let mut best_v = objective(&best_c);
    let coarse = p.checked_pow(m as u32).filter(|&n| n <= MAX_COARSE);
    if let Some(total) = coarse {
        let mut c = vec![0.0; m];
        for idx in 1..total {
            let mut rem = idx;
            for ci in c.iter_mut() {
                *ci = (rem % p) as f64 * step;
                rem /= p;
            }
            let v = objective(&c);
            if v > best_v {
                best_v = v;
                best_c.copy_from_slice(&c);
            }
        }
    }
    // Local refinement, one coordinate at a time.
    for _sweep in 0..50 {
        let before = best_v;
        for i in 0..m {
            let lo = (best_c[i] - step).max(0.0);
            let hi = (best_c[i] + step).min(r);
            let mut c = best_c.clone();
            let (ci, vi) = golden_max(
                |s| {
                    c[i] = s;
                    objective(&c)
                },
                lo,
                hi,
                spec.tol.max(1e-15) * (1.0 + r),
            );
            if vi > best_v {
                best_v = vi;
                best_c[i] = ci;
            }
        }
        if best_v - before <= spec.tol {
            break;
        }
    }
    let mut unbounded = false;
    for i in 0..m {
        if best_c[i] >= r - 0.5 * step {
            let mut c = best_c.clone();
            c[i] = r - step;
            if best_v > objective(&c) + spec.tol {
                unbounded = true;
            }
        }
    }
    if unbounded {
        log::warn!("face-lift at {x:?} still increasing at search radius {r}");
    }
    let mut argmax = vec![0.0; d];
    for (g, ci) in gens.iter().zip(&best_c) {
        for i in 0..d {
            argmax[i] += ci * g[i];
        }
    }
    Ok(FaceliftValue {
        value: best_v,
        argmax,
        coefficients: best_c,
        unbounded,
    })
}

/// Golden-section maximisation on `[a, b]`; returns the best point seen.
fn golden_max(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut best = (a, f(a));
    let fb = f(b);
    if fb > best.1 {
        best = (b, fb);
    }
    let mut c = b - GOLDEN * (b - a);
    let mut e = a + GOLDEN * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    while (b - a).abs() > tol {
        if fc >= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + GOLDEN * (b - a);
            fe = f(e);
        }
    }
    for (s, v) in [(c, fc), (e, fe)] {
        if v > best.1 {
            best = (s, v);
        }
    }
    best
}

/// Writes `x1..xd,U,U_hat,argmax_u`; the shift is `;`-separated.
pub fn write_facelift_csv<W: Write>(spec: &FaceliftSpec, points: &[Vec<f64>], w: W) -> Result<()> {
    let d = spec.constraint.dim();
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.extend(["U", "U_hat", "argmax_u"].map(String::from));
    wr.write_record(&header)?;
    for x in points {
        let fl = facelift(spec, x)?;
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push((spec.payoff)(x).to_string());
        rec.push(fl.value.to_string());
        rec.push(fl.argmax.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Grid and bound-ladder settings of the auxiliary problem.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxSpec {
    pub state_box: Vec<(f64, f64)>,
    pub n_space: usize,
    pub quad_nodes: usize,
    pub levels: LevelRule,
    pub start_bound: f64,
    pub max_doublings: usize,
    /// Stop once two consecutive doublings move `Y` by less than this.
    pub tol: f64,
}

impl AuxSpec {
    fn dp_spec(&self, model: &Arc<dyn Dynamics>, cs: &ConstraintSet, bound: f64) -> Result<GridDpSpec> {
        let d = self.state_box.len();
        let push_model = model.clone();
        let cs = cs.clone();
        Ok(GridDpSpec::new(self.state_box.clone(), self.n_space, self.levels.levels(bound, d))?
            .with_quad_nodes(self.quad_nodes)
            .with_timing(Timing::AfterNoise)
            .with_running_cost(move |t, nu| {
                let mut f = vec![0.0; d * d];
                push_model.push(t, &mut f);
                let u: Vec<f64> = (0..d).map(|i| (0..d).map(|j| f[i * d + j] * nu[j]).sum()).collect();
                support_function(&u, t, &cs)
            }))
    }
}

pub struct AuxReport {
    pub estimate: ValueEstimate,
    /// `(bound, Y)` along the doubling ladder.
    pub ladder: Vec<(f64, f64)>,
    pub converged: bool,
    pub bound: f64,
    /// Tables at the final bound, for evaluation at other starts.
    pub solution: DpSolution,
}

impl fmt::Debug for AuxReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuxReport")
            .field("estimate", &self.estimate)
            .field("ladder", &self.ladder)
            .field("converged", &self.converged)
            .finish_non_exhaustive()
    }
}

/// Solves the auxiliary problem at one control bound.
pub fn auxiliary_at_bound(
    model: Arc<dyn Dynamics>,
    terminal: &TerminalFunctional,
    cs: &ConstraintSet,
    grid: TimeGrid,
    x: &[f64],
    aux: &AuxSpec,
    bound: f64,
) -> Result<DpSolution> {
    let spec = aux.dp_spec(&model, cs, bound)?;
    solve_grid_dp(model, terminal, bound, &spec, grid, x)
}

/// `Y^x`: the auxiliary problem solved on a doubling bound ladder.
pub fn auxiliary_value_y(
    model: Arc<dyn Dynamics>,
    terminal: &TerminalFunctional,
    cs: &ConstraintSet,
    grid: TimeGrid,
    x: &[f64],
    aux: &AuxSpec,
) -> Result<AuxReport> {
    if !(aux.start_bound > 0.0) {
        return Err(Error::invalid("start_bound", "must be positive"));
    }
    let mut bound = aux.start_bound;
    let mut ladder = Vec::new();
    let mut sol = auxiliary_at_bound(model.clone(), terminal, cs, grid, x, aux, bound)?;
    ladder.push((bound, sol.value()));
    let mut converged = false;
    for _ in 0..aux.max_doublings {
        bound *= 2.0;
        sol = auxiliary_at_bound(model.clone(), terminal, cs, grid, x, aux, bound)?;
        ladder.push((bound, sol.value()));
        let n = ladder.len();
        if n >= 3 && (ladder[n - 1].1 - ladder[n - 2].1).abs() < aux.tol && (ladder[n - 2].1 - ladder[n - 3].1).abs() < aux.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("auxiliary bound ladder stopped at {bound} without meeting tolerance {}", aux.tol);
    }
    let estimate = ValueEstimate {
        value: sol.value(),
        se: 0.0,
        method: Method::GridDp,
        meta: serde_json::json!({ "bound": bound, "ladder": ladder, "converged": converged }),
    };
    Ok(AuxReport {
        estimate,
        ladder,
        converged,
        bound,
        solution: sol,
    })
}

/// `(4/3)|Y_N − Y_{2N−1}|` at a fixed bound.
fn interpolation_tolerance(
    model: &Arc<dyn Dynamics>,
    terminal: &TerminalFunctional,
    cs: &ConstraintSet,
    grid: TimeGrid,
    x: &[f64],
    aux: &AuxSpec,
    bound: f64,
    coarse: f64,
) -> Result<f64> {
    let fine = AuxSpec {
        n_space: 2 * aux.n_space - 1,
        ..aux.clone()
    };
    let v = auxiliary_at_bound(model.clone(), terminal, cs, grid, x, &fine, bound)?.value();
    Ok(4.0 / 3.0 * (coarse - v).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub bound: f64,
    pub y_payoff: f64,
    pub y_lifted: f64,
    pub gap: f64,
    pub interpolation_tol: f64,
    pub holds: bool,
    /// `(bound, gap)` along the ladder of the payoff arm.
    pub gap_ladder: Vec<(f64, f64)>,
}

/// `Y` with terminal `U` against `Y` with terminal `Û`, same DP settings.
pub fn facelift_equivalence_test(
    model: Arc<dyn Dynamics>,
    spec: &FaceliftSpec,
    grid: TimeGrid,
    x: &[f64],
    aux: &AuxSpec,
) -> Result<EquivalenceReport> {
    if grid.t_start() >= grid.t_end() {
        return Err(Error::Precondition("need t < T".into()));
    }
    let cs = &spec.constraint;
    let payoff = spec.payoff.clone();
    let u = TerminalFunctional::markov("payoff", move |y| payoff(y));
    let lifted = spec.lifted_terminal();
    let arm_u = auxiliary_value_y(model.clone(), &u, cs, grid, x, aux)?;
    let mut gap_ladder = Vec::with_capacity(arm_u.ladder.len());
    let mut y_lifted = f64::NAN;
    for &(b, yu) in &arm_u.ladder {
        y_lifted = auxiliary_at_bound(model.clone(), &lifted, cs, grid, x, aux, b)?.value();
        gap_ladder.push((b, (yu - y_lifted).abs()));
    }
    let b = arm_u.bound;
    let tol_u = interpolation_tolerance(&model, &u, cs, grid, x, aux, b, arm_u.estimate.value)?;
    let tol_l = interpolation_tolerance(&model, &lifted, cs, grid, x, aux, b, y_lifted)?;
    let interpolation_tol = tol_u.max(tol_l);
    let gap = (arm_u.estimate.value - y_lifted).abs();
    Ok(EquivalenceReport {
        bound: b,
        y_payoff: arm_u.estimate.value,
        y_lifted,
        gap,
        interpolation_tol,
        holds: gap <= 2.0 * interpolation_tol,
        gap_ladder,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftEntry {
    pub iota: Vec<f64>,
    pub delta: f64,
    pub y_shifted: f64,
    /// `Y^x − (Y^{x+ι} − δ(ι))`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    pub y: f64,
    pub entries: Vec<ShiftEntry>,
    pub tolerance: f64,
    pub holds: bool,
}

/// Checks `Y^x ≥ Y^{x+ι} − δ(ι)` for deterministic shifts `ι` of the polar
/// cone, reading one set of auxiliary tables at the shifted starts.
pub fn shift_property_test(
    model: Arc<dyn Dynamics>,
    terminal: &TerminalFunctional,
    cs: &ConstraintSet,
    grid: TimeGrid,
    x: &[f64],
    iotas: &[Vec<f64>],
    aux: &AuxSpec,
) -> Result<ShiftReport> {
    let t = grid.t_start();
    let deltas: Vec<f64> = iotas.iter().map(|i| support_function(i, t, cs)).collect();
    if let Some(i) = deltas.iter().position(|d| !d.is_finite()) {
        return Err(Error::Precondition(format!("shift {:?} is outside the polar cone", iotas[i])));
    }
    let rep = auxiliary_value_y(model.clone(), terminal, cs, grid, x, aux)?;
    let sol = &rep.solution;
    let tolerance = interpolation_tolerance(&model, terminal, cs, grid, x, aux, rep.bound, sol.value())?;
    let y = sol.value_at(0, x);
    let entries: Vec<ShiftEntry> = iotas
        .iter()
        .zip(deltas)
        .map(|(iota, delta)| {
            let z: Vec<f64> = x.iter().zip(iota).map(|(a, b)| a + b).collect();
            let y_shifted = sol.value_at(0, &z);
            ShiftEntry {
                iota: iota.clone(),
                delta,
                y_shifted,
                slack: y - (y_shifted - delta),
            }
        })
        .collect();
    Ok(ShiftReport {
        y,
        holds: entries.iter().all(|e| e.slack >= -tolerance),
        entries,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use crate::model::transaction;

    fn toy_spec() -> FaceliftSpec {
        let cs = ConstraintSet::constant(1, vec![1.0]).unwrap();
        FaceliftSpec::new(Arc::new(|x: &[f64]| benchmark::payoff(x[0])), cs, 1.0)
    }

    #[test]
    fn toy_facelift_values() {
        let s = toy_spec();
        let a = facelift(&s, &[0.0]).unwrap();
        assert!(a.value.abs() < 1e-12);
        assert!((a.argmax[0] - 1.0).abs() < 1e-6);
        let b = facelift(&s, &[2.0]).unwrap();
        assert_eq!(b.value, -1.0);
        assert_eq!(b.argmax, vec![0.0]);
    }

    #[test]
    fn zero_directions_leave_payoff_unchanged() {
        let cs = ConstraintSet::constant(1, vec![0.0]).unwrap();
        let s = FaceliftSpec::new(Arc::new(|x: &[f64]| -(x[0] - 1.0).powi(2)), cs, 1.0);
        for x in [-1.0, 0.0, 0.5, 3.0] {
            assert_eq!(facelift(&s, &[x]).unwrap().value, -(x - 1.0f64).powi(2));
        }
    }

    #[test]
    fn increasing_payoff_is_flagged_unbounded() {
        let cs = ConstraintSet::constant(1, vec![1.0]).unwrap();
        let s = FaceliftSpec::new(Arc::new(|x: &[f64]| x[0]), cs, 1.0).with_search(4.0, 9);
        let v = facelift(&s, &[0.0]).unwrap();
        assert!(v.unbounded);
        assert_eq!(v.value, 4.0);
    }

    #[test]
    fn liquidation_value_is_not_improved() {
        let lam = 0.1;
        let cs = transaction::transaction_constraint(lam);
        let s = FaceliftSpec::new(Arc::new(move |x: &[f64]| transaction::liquidation(x[0], x[1], lam)), cs, 1.0);
        for (x, y) in [(1.0, 0.5), (0.0, -1.0), (2.0, 3.0)] {
            let v = facelift(&s, &[x, y, 0.0]).unwrap();
            assert!((v.value - transaction::liquidation(x, y, lam)).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        write_facelift_csv(&toy_spec(), &[vec![0.0], vec![2.0]], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,U,U_hat,argmax_u\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
