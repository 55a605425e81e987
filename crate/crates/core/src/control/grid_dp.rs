//! Backward induction on a space grid for Markovian problems with `d ≤ 2`.
//!
//! ```text
//! v_k(x) = max_ν E[v_{k+1}(x + (μ + fν)Δ + σ√Δ ξ)] − c(ν)Δ
//! ```
//!
//! with a tensor Gauss–Hermite rule for `ξ`, multilinear interpolation in
//! space and constant extension outside the box.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::{Method, ValueEstimate};
use crate::error::{Error, Result};
use crate::model::{Dynamics, TerminalFunctional};
use crate::pathspace::{History, TimeGrid};
use crate::quadrature::gauss_hermite;
use crate::simulate::ControlSpec;

pub type RunningCost = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

pub const MIN_QUAD_NODES: usize = 7;
pub const MAX_DIM: usize = 2;

/// Control levels `0, step, 2·step, …, n` in every coordinate.
pub fn uniform_levels(n: f64, step: f64, d: usize) -> Vec<Vec<f64>> {
    let m = (n / step).round() as usize;
    let axis: Vec<f64> = (0..=m).map(|i| (i as f64 * step).min(n)).collect();
    tensor_levels(&axis, d)
}

/// `{0} ∪ {2^j ≤ n} ∪ {n}` in every coordinate.
pub fn geometric_levels(n: f64, d: usize) -> Vec<Vec<f64>> {
    let mut axis = vec![0.0];
    let mut v = 1.0;
    while v < n {
        axis.push(v);
        v *= 2.0;
    }
    if n > 0.0 {
        axis.push(n);
    }
    axis.dedup();
    tensor_levels(&axis, d)
}

/// The vertices `{0, n}^d`.
pub fn vertex_levels(n: f64, d: usize) -> Vec<Vec<f64>> {
    let axis = if n > 0.0 { vec![0.0, n] } else { vec![0.0] };
    tensor_levels(&axis, d)
}

/// Named level lattice; `uniform` and (for powers of two) `geometric`
/// lattices are nested as the bound doubles.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevelRule {
    Uniform { step: f64 },
    Geometric,
    Vertices,
}

impl LevelRule {
    pub fn levels(&self, n: f64, d: usize) -> Vec<Vec<f64>> {
        match *self {
            LevelRule::Uniform { step } => uniform_levels(n, step, d),
            LevelRule::Geometric => geometric_levels(n, d),
            LevelRule::Vertices => vertex_levels(n, d),
        }
    }
}

/// Lexicographic tensor product; the zero vector comes first.
fn tensor_levels(axis: &[f64], d: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

/// When the control of a step is chosen relative to its noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    /// Euler ordering: `ν_k` is fixed at `t_k`, before `ΔB_k` is seen.
    #[default]
    BeforeNoise,
    /// `ν` is chosen after `ΔB_k`, so the last action happens at `T`.
    AfterNoise,
}

#[derive(Clone)]
pub struct GridDpSpec {
    pub state_box: Vec<(f64, f64)>,
    pub n_space: usize,
    pub control_levels: Vec<Vec<f64>>,
    pub quad_nodes: usize,
    /// Cost rate `c(t, ν)`; the reward is reduced by `c Δ` per step.
    pub running_cost: Option<RunningCost>,
    pub timing: Timing,
}

impl fmt::Debug for GridDpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridDpSpec")
            .field("state_box", &self.state_box)
            .field("n_space", &self.n_space)
            .field("levels", &self.control_levels.len())
            .field("quad_nodes", &self.quad_nodes)
            .field("running_cost", &self.running_cost.is_some())
            .field("timing", &self.timing)
            .finish()
    }
}

impl GridDpSpec {
    pub fn new(state_box: Vec<(f64, f64)>, n_space: usize, control_levels: Vec<Vec<f64>>) -> Result<Self> {
        let spec = Self {
            state_box,
            n_space,
            control_levels,
            quad_nodes: MIN_QUAD_NODES,
            running_cost: None,
            timing: Timing::BeforeNoise,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_quad_nodes(mut self, q: usize) -> Self {
        self.quad_nodes = q;
        self
    }

    pub fn with_running_cost(mut self, c: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.running_cost = Some(Arc::new(c));
        self
    }

    pub fn with_timing(mut self, timing: Timing) -> Self {
        self.timing = timing;
        self
    }

    pub fn with_n_space(mut self, n: usize) -> Self {
        self.n_space = n;
        self
    }

    pub fn with_levels(mut self, levels: Vec<Vec<f64>>) -> Self {
        self.control_levels = levels;
        self
    }

    fn validate(&self) -> Result<()> {
        let d = self.state_box.len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::invalid("state_box", format!("grid DP supports 1 ≤ d ≤ {MAX_DIM}, got {d}")));
        }
        if self.state_box.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::invalid("state_box", "every interval needs lo < hi"));
        }
        if self.n_space < 3 {
            return Err(Error::invalid("n_space", format!("need at least 3 points, got {}", self.n_space)));
        }
        if self.quad_nodes < MIN_QUAD_NODES {
            return Err(Error::invalid("quad_nodes", format!("need at least {MIN_QUAD_NODES}")));
        }
        if self.control_levels.iter().any(|l| l.len() != d) {
            return Err(Error::invalid("control_levels", "level dimension differs from the box"));
        }
        if !self.control_levels.iter().any(|l| l.iter().all(|&v| v == 0.0)) {
            return Err(Error::invalid("control_levels", "the zero control must be a level"));
        }
        Ok(())
    }
}

/// Uniform tensor grid over the state box.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    lo: Vec<f64>,
    h: Vec<f64>,
    n: usize,
}

impl SpaceGrid {
    pub fn new(state_box: &[(f64, f64)], n: usize) -> Self {
        Self {
            lo: state_box.iter().map(|b| b.0).collect(),
            h: state_box.iter().map(|b| (b.1 - b.0) / (n - 1) as f64).collect(),
            n,
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn n_per_dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn point(&self, idx: usize, out: &mut [f64]) {
        let mut r = idx;
        for a in 0..self.dim() {
            out[a] = self.lo[a] + (r % self.n) as f64 * self.h[a];
            r /= self.n;
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(a, &v)| {
            let hi = self.lo[a] + (self.n - 1) as f64 * self.h[a];
            v >= self.lo[a] - 1e-12 && v <= hi + 1e-12
        })
    }

    /// Multilinear interpolation; coordinates are clamped to the box.
    pub fn interpolate(&self, table: &[f64], x: &[f64]) -> f64 {
        match self.dim() {
            1 => {
                let (i, w) = self.locate(0, x[0]);
                (1.0 - w) * table[i] + w * table[i + 1]
            }
            _ => {
                let (i, wi) = self.locate(0, x[0]);
                let (j, wj) = self.locate(1, x[1]);
                let n = self.n;
                let v = |a: usize, b: usize| table[b * n + a];
                (1.0 - wj) * ((1.0 - wi) * v(i, j) + wi * v(i + 1, j)) + wj * ((1.0 - wi) * v(i, j + 1) + wi * v(i + 1, j + 1))
            }
        }
    }

    fn locate(&self, a: usize, v: f64) -> (usize, f64) {
        let s = ((v - self.lo[a]) / self.h[a]).clamp(0.0, (self.n - 1) as f64);
        let i = (s.floor() as usize).min(self.n - 2);
        (i, s - i as f64)
    }
}

/// Tables `v_k` for every node plus the maximising level index per point.
pub struct DpSolution {
    pub grid: TimeGrid,
    pub space: SpaceGrid,
    pub levels: Vec<Vec<f64>>,
    tables: Vec<Vec<f64>>,
    policy: Vec<Vec<u32>>,
    stepper: Stepper,
    pub estimate: ValueEstimate,
}

impl fmt::Debug for DpSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DpSolution")
            .field("grid", &self.grid)
            .field("space", &self.space)
            .field("levels", &self.levels.len())
            .field("estimate", &self.estimate)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
struct Quad {
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl Quad {
    fn new(q: usize, d: usize) -> Self {
        let (x, w) = gauss_hermite(q);
        let mut nodes = vec![vec![]];
        let mut weights = vec![1.0];
        for _ in 0..d {
            let mut nn = Vec::new();
            let mut nw = Vec::new();
            for (p, pw) in nodes.iter().zip(&weights) {
                for (xi, wi) in x.iter().zip(&w) {
                    let mut v = p.clone();
                    v.push(*xi);
                    nn.push(v);
                    nw.push(pw * wi);
                }
            }
            nodes = nn;
            weights = nw;
        }
        Self { nodes, weights }
    }
}

/// One-step evaluation shared by the solver, policy replay and composition.
#[derive(Clone)]
struct Stepper {
    model: Arc<dyn Dynamics>,
    levels: Vec<Vec<f64>>,
    quad: Quad,
    cost: Option<RunningCost>,
    timing: Timing,
    dt: f64,
}

impl Stepper {
    /// Best level index and value at `(t, x)` against `next` on `space`.
    /// Ties go to the earliest (smallest) level. Under
    /// [`Timing::AfterNoise`] the index is the choice at the central node.
    fn best(&self, t: f64, x: &[f64], space: &SpaceGrid, next: &[f64]) -> (usize, f64) {
        let d = x.len();
        let dt = self.dt;
        let h = History::markov(t, x);
        let mut mu = vec![0.0; d];
        let mut sigma = vec![0.0; d * d];
        let mut f = vec![0.0; d * d];
        self.model.drift(&h, &mut mu);
        self.model.vol(&h, &mut sigma);
        self.model.push(t, &mut f);
        let sq = dt.sqrt();
        let base: Vec<f64> = x.iter().zip(&mu).map(|(a, m)| a + m * dt).collect();
        let shifts: Vec<Vec<f64>> = self
            .levels
            .iter()
            .map(|l| (0..d).map(|i| (0..d).map(|j| f[i * d + j] * l[j]).sum::<f64>() * dt).collect())
            .collect();
        let costs: Vec<f64> = match &self.cost {
            Some(c) => self.levels.iter().map(|l| c(t, l) * dt).collect(),
            None => vec![0.0; self.levels.len()],
        };
        let mut y = vec![0.0; d];
        let noisy = |xi: &[f64], y: &mut [f64]| {
            for i in 0..d {
                y[i] = base[i] + (0..d).map(|j| sigma[i * d + j] * sq * xi[j]).sum::<f64>();
            }
        };
        let mut z = vec![0.0; d];
        match self.timing {
            Timing::BeforeNoise => {
                let mut best = (0, f64::NEG_INFINITY);
                for (li, sh) in shifts.iter().enumerate() {
                    let mut acc = 0.0;
                    for (xi, w) in self.quad.nodes.iter().zip(&self.quad.weights) {
                        noisy(xi, &mut y);
                        for i in 0..d {
                            z[i] = y[i] + sh[i];
                        }
                        acc += w * space.interpolate(next, &z);
                    }
                    let v = acc - costs[li];
                    if v > best.1 {
                        best = (li, v);
                    }
                }
                best
            }
            Timing::AfterNoise => {
                let centre = self.quad.nodes.len() / 2;
                let mut acc = 0.0;
                let mut centre_choice = 0;
                for (qi, (xi, w)) in self.quad.nodes.iter().zip(&self.quad.weights).enumerate() {
                    noisy(xi, &mut y);
                    let mut best = (0, f64::NEG_INFINITY);
                    for (li, sh) in shifts.iter().enumerate() {
                        for i in 0..d {
                            z[i] = y[i] + sh[i];
                        }
                        let v = space.interpolate(next, &z) - costs[li];
                        if v > best.1 {
                            best = (li, v);
                        }
                    }
                    if qi == centre {
                        centre_choice = best.0;
                    }
                    acc += w * best.1;
                }
                (centre_choice, acc)
            }
        }
    }
}

fn check_problem(model: &dyn Dynamics, terminal: &TerminalFunctional, spec: &GridDpSpec, n_bound: f64) -> Result<()> {
    spec.validate()?;
    if !model.is_markovian() {
        return Err(Error::NotMarkovian("grid DP needs coefficients of the current state only".into()));
    }
    if !terminal.is_markovian() {
        return Err(Error::NotMarkovian(format!("terminal functional `{}`", terminal.name())));
    }
    if model.dim() != spec.state_box.len() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: spec.state_box.len(),
        });
    }
    if spec.control_levels.iter().flatten().any(|&v| v < 0.0 || v > n_bound + 1e-12) {
        return Err(Error::invalid("control_levels", format!("levels must lie in [0, {n_bound}]")));
    }
    Ok(())
}

/// Solves the bounded-control problem `v^n` by backward induction and
/// reports `v_0(x0)`.
pub fn solve_grid_dp(
    model: Arc<dyn Dynamics>,
    terminal: &TerminalFunctional,
    n_bound: f64,
    spec: &GridDpSpec,
    grid: TimeGrid,
    x0: &[f64],
) -> Result<DpSolution> {
    check_problem(model.as_ref(), terminal, spec, n_bound)?;
    let space = SpaceGrid::new(&spec.state_box, spec.n_space);
    if !space.contains(x0) {
        return Err(Error::OutOfDomain(x0.to_vec()));
    }
    let d = space.dim();
    let stepper = Stepper {
        model,
        levels: spec.control_levels.clone(),
        quad: Quad::new(spec.quad_nodes, d),
        cost: spec.running_cost.clone(),
        timing: spec.timing,
        dt: grid.dt(),
    };
    let kk = grid.n_steps();
    let terminal_table: Vec<f64> = (0..space.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; d],
            |x, i| {
                space.point(i, x);
                terminal.eval_state(x).expect("checked Markovian")
            },
        )
        .collect();
    let mut tables = vec![Vec::new(); kk + 1];
    let mut policy = vec![Vec::new(); kk];
    tables[kk] = terminal_table;
    for k in (0..kk).rev() {
        let t = grid.node(k);
        let next = &tables[k + 1];
        let (vals, pol): (Vec<f64>, Vec<u32>) = (0..space.len())
            .into_par_iter()
            .map_init(
                || vec![0.0; d],
                |x, i| {
                    space.point(i, x);
                    let (l, v) = stepper.best(t, x, &space, next);
                    (v, l as u32)
                },
            )
            .unzip();
        tables[k] = vals;
        policy[k] = pol;
    }
    let value = space.interpolate(&tables[0], x0);
    let estimate = ValueEstimate {
        value,
        se: 0.0,
        method: Method::GridDp,
        meta: serde_json::json!({
            "n_bound": n_bound,
            "n_space": spec.n_space,
            "levels": spec.control_levels.len(),
            "quad_nodes": spec.quad_nodes,
            "n_steps": kk,
            "timing": spec.timing,
        }),
    };
    Ok(DpSolution {
        grid,
        space,
        levels: spec.control_levels.clone(),
        tables,
        policy,
        stepper,
        estimate,
    })
}

impl DpSolution {
    pub fn value(&self) -> f64 {
        self.estimate.value
    }

    pub fn table(&self, k: usize) -> &[f64] {
        &self.tables[k]
    }

    /// `v_k(x)` by interpolation.
    pub fn value_at(&self, k: usize, x: &[f64]) -> f64 {
        self.space.interpolate(&self.tables[k], x)
    }

    /// Maximising level index stored at grid point `i` of step `k`.
    pub fn policy_index(&self, k: usize, i: usize) -> usize {
        self.policy[k][i] as usize
    }

    /// The DP decision rule at an arbitrary state: one-step lookahead on
    /// `v_{k+1}`.
    pub fn decide(&self, k: usize, x: &[f64]) -> usize {
        self.stepper.best(self.grid.node(k), x, &self.space, &self.tables[k + 1]).0
    }

    pub fn timing(&self) -> Timing {
        self.stepper.timing
    }

    /// Feedback control that replays the DP decision rule. Only the Euler
    /// ordering has a non-anticipative replay.
    pub fn replay_policy(self: &Arc<Self>) -> Result<ControlSpec> {
        if self.stepper.timing != Timing::BeforeNoise {
            return Err(Error::Precondition("policy replay needs controls fixed before the step's noise".into()));
        }
        let me = Arc::clone(self);
        let bound = self.levels.iter().flatten().cloned().fold(0.0, f64::max);
        ControlSpec::feedback(self.space.dim(), bound, move |k, h, out| {
            let l = me.decide(k, h.current());
            out.copy_from_slice(&me.levels[l]);
        })
    }
}

/// Composes a head recursion over `[t_start, s]` on another space grid with
/// the tail table of `tail` at node `ks ≥ 1`; returns `v_0(x0)`.
pub(crate) fn compose_head(tail: &DpSolution, ks: usize, head_space: &SpaceGrid, x0: &[f64]) -> f64 {
    let d = head_space.dim();
    // `None` reads the tail table on its own grid.
    let mut next: Option<Vec<f64>> = None;
    for k in (0..ks).rev() {
        let t = tail.grid.node(k);
        let (reader, table) = match &next {
            None => (&tail.space, tail.tables[ks].as_slice()),
            Some(v) => (head_space, v.as_slice()),
        };
        let vals: Vec<f64> = (0..head_space.len())
            .into_par_iter()
            .map_init(
                || vec![0.0; d],
                |x, i| {
                    head_space.point(i, x);
                    tail.stepper.best(t, x, reader, table).1
                },
            )
            .collect();
        next = Some(vals);
    }
    head_space.interpolate(&next.expect("ks ≥ 1"), x0)
}

/// Largest fraction of paths leaving `state_box` before `T` under `control`.
pub fn boundary_hit_probability(model: &dyn Dynamics, plan: &crate::simulate::SimulationPlan, state_box: &[(f64, f64)]) -> Result<f64> {
    let ens = crate::simulate::simulate_forward(model, plan)?;
    let g = ens.grid();
    let hits = (0..ens.n_paths())
        .into_par_iter()
        .filter(|&j| (0..g.n_nodes()).any(|k| ens.node(j, k).iter().zip(state_box).any(|(v, (lo, hi))| v < lo || v > hi)))
        .count();
    Ok(hits as f64 / ens.n_paths() as f64)
}
