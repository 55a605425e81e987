//! Euler–Maruyama ensembles, Girsanov reweighting and moment diagnostics.
//!
//! Coefficients at step `k` see the interpolated history up to `t_k`
//! (initial segment followed by the simulated nodes). Each path draws its
//! Brownian increments from its own stream, see [`crate::rng`].

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dynamics, TerminalFunctional};
use crate::pathspace::{History, Path, TimeGrid};
use crate::rng;
use crate::stats::{self, MeanSe};

pub type ControlFn = Arc<dyn Fn(usize, &History<'_>, &mut [f64]) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    None,
    Constant,
    Feedback,
    OpenLoopTable,
}

/// A bounded control rate `ν` with `0 ≤ νⁱ ≤ bound`; evaluations are clamped.
#[derive(Clone)]
pub struct ControlSpec {
    kind: ControlKind,
    dim: usize,
    bound: f64,
    eval: Option<ControlFn>,
}

impl fmt::Debug for ControlSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSpec")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("bound", &self.bound)
            .finish()
    }
}

impl ControlSpec {
    pub fn none(dim: usize) -> Self {
        Self {
            kind: ControlKind::None,
            dim,
            bound: 0.0,
            eval: None,
        }
    }

    pub fn constant(values: Vec<f64>, bound: f64) -> Result<Self> {
        check_bound(bound)?;
        let dim = values.len();
        Ok(Self {
            kind: ControlKind::Constant,
            dim,
            bound,
            eval: Some(Arc::new(move |_, _, out| out.copy_from_slice(&values))),
        })
    }

    pub fn feedback(dim: usize, bound: f64, f: impl Fn(usize, &History<'_>, &mut [f64]) + Send + Sync + 'static) -> Result<Self> {
        check_bound(bound)?;
        Ok(Self {
            kind: ControlKind::Feedback,
            dim,
            bound,
            eval: Some(Arc::new(f)),
        })
    }

    /// Deterministic schedule: row `k` is applied on `[t_k, t_{k+1})`; the
    /// last row is reused past the end of the table.
    pub fn open_loop_table(table: Vec<Vec<f64>>, bound: f64) -> Result<Self> {
        check_bound(bound)?;
        let dim = table.first().map(Vec::len).ok_or_else(|| Error::invalid("control", "empty table"))?;
        if table.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("control", "ragged open-loop table"));
        }
        Ok(Self {
            kind: ControlKind::OpenLoopTable,
            dim,
            bound,
            eval: Some(Arc::new(move |k, _, out| out.copy_from_slice(&table[k.min(table.len() - 1)]))),
        })
    }

    pub fn kind(&self) -> ControlKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn is_active(&self) -> bool {
        self.eval.is_some()
    }

    pub fn evaluate(&self, step: usize, h: &History<'_>, out: &mut [f64]) {
        match &self.eval {
            None => out.fill(0.0),
            Some(f) => {
                f(step, h, out);
                for v in out.iter_mut() {
                    *v = v.clamp(0.0, self.bound);
                }
            }
        }
    }
}

fn check_bound(bound: f64) -> Result<()> {
    if !(bound >= 0.0) || !bound.is_finite() {
        return Err(Error::invalid("bound", format!("control bound must be finite and ≥ 0, got {bound}")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    /// History before `grid.t_start`; its last value is the starting point.
    pub initial_segment: Option<Path>,
    pub x0: Vec<f64>,
    pub control: ControlSpec,
    pub weak_mode: bool,
}

impl SimulationPlan {
    pub fn new(grid: TimeGrid, n_paths: usize, seed: u64, x0: Vec<f64>) -> Self {
        let dim = x0.len();
        Self {
            grid,
            n_paths,
            seed,
            initial_segment: None,
            x0,
            control: ControlSpec::none(dim),
            weak_mode: false,
        }
    }

    pub fn with_history(mut self, segment: Path) -> Result<Self> {
        if (segment.grid().t_end() - self.grid.t_start()).abs() > 1e-12 {
            return Err(Error::GridMismatch(format!(
                "initial segment ends at {} but the simulation starts at {}",
                segment.grid().t_end(),
                self.grid.t_start()
            )));
        }
        self.x0 = segment.terminal().to_vec();
        self.initial_segment = Some(segment);
        Ok(self)
    }

    pub fn with_control(mut self, control: ControlSpec) -> Self {
        self.control = control;
        self
    }

    pub fn weak(mut self, yes: bool) -> Self {
        self.weak_mode = yes;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self, model: &dyn Dynamics) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::invalid("paths", "need at least one path"));
        }
        let d = model.dim();
        if self.x0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.x0.len(),
            });
        }
        if self.control.dim != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.control.dim,
            });
        }
        Ok(())
    }
}

/// A simulated batch. Node values are stored path-major.
#[derive(Debug, Clone)]
pub struct Ensemble {
    grid: TimeGrid,
    dim: usize,
    n_paths: usize,
    seed: u64,
    weak: bool,
    prefix: Option<Path>,
    states: Vec<f64>,
    increments: Vec<f64>,
    controls: Vec<f64>,
    log_weights: Vec<f64>,
}

impl Ensemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn is_weak(&self) -> bool {
        self.weak
    }
    pub fn prefix(&self) -> Option<&Path> {
        self.prefix.as_ref()
    }

    pub fn path_values(&self, j: usize) -> &[f64] {
        let len = self.grid.n_nodes() * self.dim;
        &self.states[j * len..(j + 1) * len]
    }

    pub fn node(&self, j: usize, k: usize) -> &[f64] {
        &self.path_values(j)[k * self.dim..(k + 1) * self.dim]
    }

    pub fn history(&self, j: usize, k: usize) -> History<'_> {
        let s = self.path_values(j);
        let d = self.dim;
        History::new(
            self.prefix.as_ref(),
            self.grid.t_start(),
            self.grid.dt(),
            &s[..k * d],
            &s[k * d..(k + 1) * d],
        )
    }

    pub fn path(&self, j: usize) -> Path {
        Path::from_flat(self.grid, self.dim, self.path_values(j).to_vec()).expect("ensemble layout is consistent")
    }

    /// Brownian increment `ΔB_k` of path `j`.
    pub fn increment(&self, j: usize, k: usize) -> &[f64] {
        let off = (j * self.grid.n_steps() + k) * self.dim;
        &self.increments[off..off + self.dim]
    }

    /// Control value applied on `[t_k, t_{k+1})`; zero for uncontrolled runs.
    pub fn control(&self, j: usize, k: usize) -> &[f64] {
        if self.controls.is_empty() {
            return &ZEROS[..self.dim];
        }
        let off = (j * self.grid.n_steps() + k) * self.dim;
        &self.controls[off..off + self.dim]
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn terminal_values(&self, u: &TerminalFunctional) -> Vec<f64> {
        let k = self.grid.n_steps();
        (0..self.n_paths).into_par_iter().map(|j| u.eval(&self.history(j, k))).collect()
    }

    /// Rows `path_id,k,t,x1..xd,logw`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["path_id".to_string(), "k".into(), "t".into()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        header.push("logw".into());
        wr.write_record(&header)?;
        for j in 0..self.n_paths {
            for k in 0..self.grid.n_nodes() {
                let mut row = vec![j.to_string(), k.to_string(), self.grid.node(k).to_string()];
                row.extend(self.node(j, k).iter().map(f64::to_string));
                row.push(self.log_weights[j].to_string());
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Compact little-endian dump:
    ///
    /// ```text
    /// magic   b"PCTL1"
    /// u32     dim
    /// u64     n_paths
    /// u64     n_steps
    /// f64     t_start
    /// f64     t_end
    /// u64     seed
    /// f64 × n_paths·(n_steps+1)·dim   node values, path-major
    /// f64 × n_paths                   Girsanov log-weights
    /// ```
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.n_paths as u64).to_le_bytes())?;
        w.write_all(&(self.grid.n_steps() as u64).to_le_bytes())?;
        w.write_all(&self.grid.t_start().to_le_bytes())?;
        w.write_all(&self.grid.t_end().to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in self.states.iter().chain(&self.log_weights) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

pub const BINARY_MAGIC: &[u8; 5] = b"PCTL1";

/// Node values and log-weights read back from [`Ensemble::write_binary`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDump {
    pub grid: TimeGrid,
    pub dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub states: Vec<f64>,
    pub log_weights: Vec<f64>,
}

pub fn read_binary<R: Read>(mut r: R) -> Result<BinaryDump> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::invalid("binary", "bad magic"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut next_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let n_paths = next_u64(&mut r)? as usize;
    let n_steps = next_u64(&mut r)? as usize;
    let t_start = f64::from_bits(next_u64(&mut r)?);
    let t_end = f64::from_bits(next_u64(&mut r)?);
    let seed = next_u64(&mut r)?;
    let grid = TimeGrid::new(t_start, t_end, n_steps)?;
    let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let states = read_f64s(n_paths * grid.n_nodes() * dim)?;
    let log_weights = read_f64s(n_paths)?;
    Ok(BinaryDump {
        grid,
        dim,
        n_paths,
        seed,
        states,
        log_weights,
    })
}

const ZEROS: [f64; 16] = [0.0; 16];

/// Per-thread scratch for one path.
struct Scratch {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    sigma_inv: Vec<f64>,
    f: Vec<f64>,
    nu: Vec<f64>,
    db: Vec<f64>,
    theta: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self {
            mu: vec![0.0; d],
            sigma: vec![0.0; d * d],
            sigma_inv: vec![0.0; d * d],
            f: vec![0.0; d * d],
            nu: vec![0.0; d],
            db: vec![0.0; d],
            theta: vec![0.0; d],
            tmp: vec![0.0; d],
        }
    }
}

/// Simulates one path into `states` (length `(K+1)·d`). `noise(k, out)`
/// supplies the standard normals of step `k`. Returns the log-weight.
#[allow(clippy::too_many_arguments)]
fn run_path(
    model: &dyn Dynamics,
    plan: &SimulationPlan,
    j: usize,
    noise: &mut dyn FnMut(usize, &mut [f64]),
    s: &mut Scratch,
    states: &mut [f64],
    mut increments: Option<&mut [f64]>,
    mut controls: Option<&mut [f64]>,
) -> Result<f64> {
    let d = model.dim();
    let g = &plan.grid;
    let dt = g.dt();
    let sqdt = dt.sqrt();
    let active = plan.control.is_active();
    states[..d].copy_from_slice(&plan.x0);
    let mut logw = 0.0;
    for k in 0..g.n_steps() {
        let t = g.node(k);
        let (head, rest) = states.split_at_mut((k + 1) * d);
        {
            let h = History::new(plan.initial_segment.as_ref(), g.t_start(), dt, &head[..k * d], &head[k * d..]);
            model.drift(&h, &mut s.mu);
            model.vol(&h, &mut s.sigma);
            if active {
                plan.control.evaluate(k, &h, &mut s.nu);
                model.push(t, &mut s.f);
                if plan.weak_mode && !model.vol_inverse(&h, &mut s.sigma_inv) {
                    return Err(Error::SingularMatrix {
                        what: "volatility",
                        step: k,
                        t,
                    });
                }
            }
        }
        noise(k, &mut s.db);
        for v in s.db.iter_mut() {
            *v *= sqdt;
        }
        let (cur, next) = (&head[k * d..], &mut rest[..d]);
        linalg::matvec(&s.sigma, &s.db, &mut s.tmp);
        for i in 0..d {
            next[i] = cur[i] + s.mu[i] * dt + s.tmp[i];
        }
        if active {
            linalg::matvec(&s.f, &s.nu, &mut s.tmp);
            if plan.weak_mode {
                linalg::matvec(&s.sigma_inv, &s.tmp, &mut s.theta);
                let mut th_db = 0.0;
                let mut th2 = 0.0;
                for i in 0..d {
                    th_db += s.theta[i] * s.db[i];
                    th2 += s.theta[i] * s.theta[i];
                }
                logw += th_db - 0.5 * th2 * dt;
            } else {
                for i in 0..d {
                    next[i] += s.tmp[i] * dt;
                }
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Coefficient {
                path: j,
                step: k,
                reason: "non-finite state".into(),
            });
        }
        if let Some(inc) = increments.as_deref_mut() {
            inc[k * d..(k + 1) * d].copy_from_slice(&s.db);
        }
        if let Some(c) = controls.as_deref_mut() {
            c[k * d..(k + 1) * d].copy_from_slice(&s.nu);
        }
    }
    Ok(logw)
}

fn brownian_noise(seed: u64, j: usize) -> impl FnMut(usize, &mut [f64]) {
    let mut rng = rng::path_rng(seed, rng::tag::BROWNIAN, j as u64);
    move |_, out| rng::fill_normal(&mut rng, out)
}

fn attach_path(e: Error, j: usize) -> Error {
    match e {
        Error::SingularMatrix { what, step, t } => Error::Coefficient {
            path: j,
            step,
            reason: format!("singular {what} at t = {t}"),
        },
        other => other,
    }
}

/// Simulates the ensemble described by `plan`.
///
/// Strong mode runs the controlled SDE. Weak mode runs the uncontrolled SDE,
/// evaluates the control on it and accumulates the Girsanov log-weight.
pub fn simulate_forward(model: &dyn Dynamics, plan: &SimulationPlan) -> Result<Ensemble> {
    plan.validate(model)?;
    let d = model.dim();
    let g = plan.grid;
    let nodes = g.n_nodes() * d;
    let steps = g.n_steps() * d;
    let keep_controls = plan.control.is_active();
    let per_path: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> = (0..plan.n_paths)
        .into_par_iter()
        .map_init(
            || Scratch::new(d),
            |s, j| {
                let mut st = vec![0.0; nodes];
                let mut inc = vec![0.0; steps];
                let mut ctl = if keep_controls { vec![0.0; steps] } else { Vec::new() };
                let mut noise = brownian_noise(plan.seed, j);
                let lw = run_path(
                    model,
                    plan,
                    j,
                    &mut noise,
                    s,
                    &mut st,
                    Some(&mut inc),
                    keep_controls.then_some(ctl.as_mut_slice()),
                )
                .map_err(|e| attach_path(e, j))?;
                Ok((st, inc, ctl, lw))
            },
        )
        .collect::<Result<_>>()?;
    let mut states = Vec::with_capacity(plan.n_paths * nodes);
    let mut increments = Vec::with_capacity(plan.n_paths * steps);
    let mut controls = Vec::with_capacity(if keep_controls { plan.n_paths * steps } else { 0 });
    let mut log_weights = Vec::with_capacity(plan.n_paths);
    for (st, inc, ctl, lw) in per_path {
        states.extend(st);
        increments.extend(inc);
        controls.extend(ctl);
        log_weights.push(lw);
    }
    Ok(Ensemble {
        grid: g,
        dim: d,
        n_paths: plan.n_paths,
        seed: plan.seed,
        weak: plan.weak_mode,
        prefix: plan.initial_segment.clone(),
        states,
        increments,
        controls,
        log_weights,
    })
}

/// Streams paths without storing them: returns `(U(X), log-weight)` per path.
pub fn simulate_terminal(model: &dyn Dynamics, u: &TerminalFunctional, plan: &SimulationPlan) -> Result<Vec<(f64, f64)>> {
    plan.validate(model)?;
    let d = model.dim();
    let g = plan.grid;
    let nodes = g.n_nodes() * d;
    (0..plan.n_paths)
        .into_par_iter()
        .map_init(
            || (Scratch::new(d), vec![0.0; nodes]),
            |(s, st), j| {
                let mut noise = brownian_noise(plan.seed, j);
                let lw = run_path(model, plan, j, &mut noise, s, st, None, None).map_err(|e| attach_path(e, j))?;
                let k = g.n_steps();
                let h = History::new(plan.initial_segment.as_ref(), g.t_start(), g.dt(), &st[..k * d], &st[k * d..]);
                Ok((u.eval(&h), lw))
            },
        )
        .collect()
}

/// Simulates a single path from explicitly supplied standard normals
/// (`n_steps·d` values, step-major). Used to probe non-anticipativity.
pub fn simulate_from_normals(model: &dyn Dynamics, plan: &SimulationPlan, normals: &[f64]) -> Result<Path> {
    plan.validate(model)?;
    let d = model.dim();
    let g = plan.grid;
    if normals.len() != g.n_steps() * d {
        return Err(Error::LengthMismatch {
            expected: g.n_steps() * d,
            got: normals.len(),
        });
    }
    let mut st = vec![0.0; g.n_nodes() * d];
    let mut noise = |k: usize, out: &mut [f64]| out.copy_from_slice(&normals[k * d..(k + 1) * d]);
    run_path(model, plan, 0, &mut noise, &mut Scratch::new(d), &mut st, None, None)?;
    Path::from_flat(g, d, st)
}

/// Girsanov log-weights `Σ θ_k·ΔB_k − ½|θ_k|²Δ`, `θ_k = σ⁻¹ f ν_k`,
/// computed on the uncontrolled simulation.
pub fn girsanov_weights(model: &dyn Dynamics, plan: &SimulationPlan, control: &ControlSpec) -> Result<Vec<f64>> {
    let plan = plan.clone().with_control(control.clone()).weak(true);
    let u = TerminalFunctional::markov("zero", |_| 0.0);
    Ok(simulate_terminal(model, &u, &plan)?.into_iter().map(|(_, w)| w).collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct WeakStrongReport {
    pub strong: MeanSe,
    pub weak: MeanSe,
    /// Mean and SE of the paired difference `U_strong − w·U_weak`.
    pub diff: MeanSe,
    pub z: f64,
    pub weight_mean: MeanSe,
}

/// Strong arm: controlled SDE. Weak arm: uncontrolled SDE reweighted by the
/// Girsanov density. Both arms use the same seed, so paths are paired.
pub fn weak_strong_agreement(model: &dyn Dynamics, u: &TerminalFunctional, control: &ControlSpec, plan: &SimulationPlan) -> Result<WeakStrongReport> {
    let strong = simulate_terminal(model, u, &plan.clone().with_control(control.clone()).weak(false))?;
    let weak = simulate_terminal(model, u, &plan.clone().with_control(control.clone()).weak(true))?;
    let s: Vec<f64> = strong.iter().map(|p| p.0).collect();
    let w: Vec<f64> = weak.iter().map(|p| p.1.exp() * p.0).collect();
    let wt: Vec<f64> = weak.iter().map(|p| p.1.exp()).collect();
    let d: Vec<f64> = s.iter().zip(&w).map(|(a, b)| a - b).collect();
    let diff = stats::mean_se(&d);
    Ok(WeakStrongReport {
        strong: stats::mean_se(&s),
        weak: stats::mean_se(&w),
        z: z_score(diff),
        diff,
        weight_mean: stats::mean_se(&wt),
    })
}

/// `mean/se`, defined as 0 for an exactly zero sample.
pub fn z_score(m: MeanSe) -> f64 {
    if m.se == 0.0 {
        if m.mean == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(m.mean)
        }
    } else {
        m.mean / m.se
    }
}

/// Empirical left-hand sides of the three moment estimates for one
/// exponent, with the shapes of their right-hand sides (the unknown
/// constants are calibrated separately).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MomentLine {
    pub p: f64,
    /// `E sup_s |X_s − x(t)|^p`.
    pub initial_lhs: f64,
    /// `√(T−t)(1+‖x‖^p) + (1+√(T−t)) E|K_T−K_t|^p`.
    pub initial_rhs_shape: f64,
    /// `E sup_s |X_s|^p`.
    pub growth_lhs: f64,
    /// `1 + ‖x‖^p + E|K_T−K_t|^p`.
    pub growth_rhs_shape: f64,
}

impl MomentLine {
    pub fn ratios(&self) -> (f64, f64) {
        (self.initial_lhs / self.initial_rhs_shape, self.growth_lhs / self.growth_rhs_shape)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MomentReport {
    pub lines: Vec<MomentLine>,
    /// Per-line `(C_initial, C_growth)` used for the check, if any.
    pub constants: Option<Vec<(f64, f64)>>,
    pub violations: Vec<String>,
}

/// Implied constants from a pilot report, inflated by `safety`.
pub fn calibrate_moment_constants(pilot: &MomentReport, safety: f64) -> Vec<(f64, f64)> {
    pilot
        .lines
        .iter()
        .map(|l| {
            let (a, b) = l.ratios();
            (a * safety, b * safety)
        })
        .collect()
}

/// Moment diagnostics for `p ∈ {2, 4}`; with `constants` the bounds are
/// checked and violations listed.
pub fn moment_diagnostics(ens: &Ensemble, constants: Option<&[(f64, f64)]>) -> MomentReport {
    let g = ens.grid();
    let d = ens.dim();
    let n = ens.n_paths();
    let span = g.span();
    let x0 = ens.node(0, 0).to_vec();
    let hist_norm = match ens.prefix() {
        Some(p) => p.history(p.grid().n_steps()).sup_norm(),
        None => crate::pathspace::norm(&x0),
    };
    let mut lines = Vec::new();
    for p in [2.0f64, 4.0] {
        let sup_dev = |j: usize| {
            (0..g.n_nodes())
                .map(|k| {
                    let x = ens.node(j, k);
                    x.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
                })
                .fold(0.0f64, f64::max)
        };
        let sup_abs = |j: usize| (0..g.n_nodes()).map(|k| crate::pathspace::norm(ens.node(j, k))).fold(0.0f64, f64::max);
        let mass = |j: usize| {
            let mut tot = vec![0.0; d];
            for k in 0..g.n_steps() {
                for (t, c) in tot.iter_mut().zip(ens.control(j, k)) {
                    *t += c * g.dt();
                }
            }
            crate::pathspace::norm(&tot)
        };
        let ik = stats::sum_by(n, |j| mass(j).powf(p)) / n as f64;
        let line = MomentLine {
            p,
            initial_lhs: stats::sum_by(n, |j| sup_dev(j).powf(p)) / n as f64,
            initial_rhs_shape: span.sqrt() * (1.0 + hist_norm.powf(p)) + (1.0 + span.sqrt()) * ik,
            growth_lhs: stats::sum_by(n, |j| sup_abs(j).powf(p)) / n as f64,
            growth_rhs_shape: 1.0 + hist_norm.powf(p) + ik,
        };
        lines.push(line);
    }
    let mut violations = Vec::new();
    if let Some(c) = constants {
        for (l, (ci, cg)) in lines.iter().zip(c) {
            if l.initial_lhs > ci * l.initial_rhs_shape {
                violations.push(format!("p={}: initial-deviation bound exceeded", l.p));
            }
            if l.growth_lhs > cg * l.growth_rhs_shape {
                violations.push(format!("p={}: growth bound exceeded", l.p));
            }
        }
    }
    MomentReport {
        lines,
        constants: constants.map(<[_]>::to_vec),
        violations,
    }
}

/// Left side `E sup_s |X_s − X'_s|^p` of the stability estimate for two
/// ensembles on the same grid, and the shape
/// `‖x−x'‖^p + E|∫d(K−K')|^p` of its right side.
pub fn moment_delta(a: &Ensemble, b: &Ensemble, p: f64) -> Result<(f64, f64)> {
    if a.grid() != b.grid() || a.n_paths() != b.n_paths() || a.dim() != b.dim() {
        return Err(Error::GridMismatch("ensembles must share grid, size and dimension".into()));
    }
    let g = a.grid();
    let d = a.dim();
    let n = a.n_paths();
    let lhs = stats::sum_by(n, |j| {
        (0..g.n_nodes())
            .map(|k| a.node(j, k).iter().zip(b.node(j, k)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max)
            .powf(p)
    }) / n as f64;
    let x_diff = crate::pathspace::norm(&a.node(0, 0).iter().zip(b.node(0, 0)).map(|(x, y)| x - y).collect::<Vec<_>>());
    let k_term = stats::sum_by(n, |j| {
        let mut tot = vec![0.0; d];
        for k in 0..g.n_steps() {
            for ((t, ca), cb) in tot.iter_mut().zip(a.control(j, k)).zip(b.control(j, k)) {
                *t += (ca - cb) * g.dt();
            }
        }
        crate::pathspace::norm(&tot).powf(p)
    }) / n as f64;
    Ok((lhs, x_diff.powf(p) + k_term))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    fn toy(sigma: f64) -> ModelSpec {
        ModelSpec::constant("toy", vec![0.0], vec![sigma], vec![1.0]).unwrap()
    }

    #[test]
    fn zero_model_stays_put() {
        let m = ModelSpec::constant("z", vec![0.0, 0.0], vec![0.0; 4], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let plan = SimulationPlan::new(grid(10), 5, 1, vec![0.3, -1.0]);
        let e = simulate_forward(&m, &plan).unwrap();
        for j in 0..5 {
            for k in 0..=10 {
                assert_eq!(e.node(j, k), &[0.3, -1.0]);
            }
        }
    }

    #[test]
    fn deterministic_push_is_exact() {
        let plan = SimulationPlan::new(grid(8), 3, 1, vec![0.5]).with_control(ControlSpec::constant(vec![0.25], 1.0).unwrap());
        let e = simulate_forward(&toy(0.0), &plan).unwrap();
        for j in 0..3 {
            assert!((e.node(j, 8)[0] - 0.75).abs() < 1e-15);
        }
    }

    #[test]
    fn control_is_clamped() {
        let c = ControlSpec::feedback(2, 1.5, |_, _, out| out.copy_from_slice(&[-3.0, 9.0])).unwrap();
        let x = [0.0, 0.0];
        let mut out = [0.0; 2];
        c.evaluate(0, &History::markov(0.0, &x), &mut out);
        assert_eq!(out, [0.0, 1.5]);
    }

    #[test]
    fn zero_control_gives_zero_weights() {
        let plan = SimulationPlan::new(grid(10), 50, 3, vec![0.0]);
        let w = girsanov_weights(&toy(1.0), &plan, &ControlSpec::constant(vec![0.0], 1.0).unwrap()).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_theta_matches_closed_form() {
        let plan = SimulationPlan::new(grid(10), 20, 5, vec![0.0]);
        let control = ControlSpec::constant(vec![0.5], 1.0).unwrap();
        let e = simulate_forward(&toy(2.0), &plan.clone().with_control(control).weak(true)).unwrap();
        let theta = 0.25;
        for j in 0..20 {
            let bt: f64 = (0..10).map(|k| e.increment(j, k)[0]).sum();
            let want = theta * bt - 0.5 * theta * theta;
            assert!((e.log_weights()[j] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn history_segment_must_end_at_start() {
        let seg = Path::constant(TimeGrid::new(-1.0, 0.5, 3).unwrap(), &[1.0]).unwrap();
        assert!(SimulationPlan::new(grid(4), 1, 0, vec![0.0]).with_history(seg).is_err());
    }

    #[test]
    fn singular_sigma_in_weak_mode_names_path_and_step() {
        let plan = SimulationPlan::new(grid(4), 2, 0, vec![0.0])
            .with_control(ControlSpec::constant(vec![1.0], 1.0).unwrap())
            .weak(true);
        match simulate_forward(&toy(0.0), &plan) {
            Err(Error::Coefficient { step, .. }) => assert_eq!(step, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_round_trip() {
        let plan = SimulationPlan::new(grid(3), 4, 9, vec![0.0]);
        let e = simulate_forward(&toy(1.0), &plan).unwrap();
        let mut buf = Vec::new();
        e.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"PCTL1");
        let back = read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.n_paths, 4);
        assert_eq!(back.states, e.states);
    }
}
