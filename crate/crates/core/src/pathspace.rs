//! Discrete path space: uniform time grids, piecewise-linear paths, the
//! concatenation `x ⊗_s x'`, running sup-norms and the `d∞` pseudo-distance.
//!
//! Every continuous path is represented by its values at the nodes of a
//! uniform [`TimeGrid`]; between nodes it is the linear interpolant. All
//! path functionals in the crate are evaluated on that interpolant.

use std::io::{Read, Write};

use crate::error::{Error, Result};

const NODE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_start >= t_end {
            return Err(Error::invalid("grid", format!("need t_start < t_end, got [{t_start}, {t_end}]")));
        }
        if n_steps == 0 {
            return Err(Error::invalid("grid", "n_steps must be at least 1"));
        }
        Ok(Self { t_start, t_end, n_steps })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn span(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Node `k`; the last node is returned as `t_end` exactly.
    pub fn node(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.t_end
        } else {
            self.t_start + k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |k| self.node(k))
    }

    /// Index of the node equal to `t` (up to a relative tolerance).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let u = (t - self.t_start) / self.dt();
        let k = u.round();
        if k < 0.0 || k > self.n_steps as f64 {
            return None;
        }
        if (u - k).abs() <= NODE_TOL * (1.0 + u.abs()) {
            Some(k as usize)
        } else {
            None
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start - NODE_TOL && t <= self.t_end + NODE_TOL
    }
}

/// A `d`-dimensional path sampled at the nodes of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl Path {
    /// Builds a path from row-major node values (`(n_steps + 1) * dim` entries).
    pub fn from_flat(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "dimension must be positive"));
        }
        let expected = grid.n_nodes() * dim;
        if values.len() != expected {
            return Err(Error::LengthMismatch { expected, got: values.len() });
        }
        Ok(Self { grid, dim, values })
    }

    pub fn from_nodes(grid: TimeGrid, nodes: &[Vec<f64>]) -> Result<Self> {
        if nodes.len() != grid.n_nodes() {
            return Err(Error::LengthMismatch {
                expected: grid.n_nodes(),
                got: nodes.len(),
            });
        }
        let dim = nodes.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(nodes.len() * dim);
        for v in nodes {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            values.extend_from_slice(v);
        }
        Self::from_flat(grid, dim, values)
    }

    pub fn constant(grid: TimeGrid, x: &[f64]) -> Result<Self> {
        let values = x.iter().copied().cycle().take(grid.n_nodes() * x.len()).collect();
        Self::from_flat(grid, x.len(), values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.node(self.grid.n_steps)
    }

    /// Value of the linear interpolant at `t`, clamped to the grid span.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let g = &self.grid;
        if t <= g.t_start {
            out.copy_from_slice(self.node(0));
            return;
        }
        if t >= g.t_end {
            out.copy_from_slice(self.terminal());
            return;
        }
        if let Some(k) = g.index_of(t) {
            out.copy_from_slice(self.node(k));
            return;
        }
        let u = (t - g.t_start) / g.dt();
        let k = (u.floor() as usize).min(g.n_steps - 1);
        let w = u - k as f64;
        let (a, b) = (self.node(k), self.node(k + 1));
        for j in 0..self.dim {
            out[j] = (1.0 - w) * a[j] + w * b[j];
        }
    }

    /// View of nodes `0..=k` as a [`History`].
    pub fn history(&self, k: usize) -> History<'_> {
        History {
            dim: self.dim,
            t_start: self.grid.t_start,
            dt: self.grid.dt(),
            prefix: None,
            head: &self.values[..k * self.dim],
            current: self.node(k),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|j| format!("x{j}")));
        wr.write_record(&header)?;
        for (k, t) in self.grid.nodes().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.node(k).iter().map(f64::to_string));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the `t,x1,...,xd` format written by [`Path::write_csv`]. The
    /// times must form a uniform grid.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let dim = rd.headers()?.len().saturating_sub(1);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid("csv", format!("bad number `{s}`: {e}")))
            };
            times.push(parse(&rec[0])?);
            for j in 1..=dim {
                values.push(parse(&rec[j])?);
            }
        }
        if times.len() < 2 {
            return Err(Error::invalid("csv", "a path needs at least two nodes"));
        }
        let grid = TimeGrid::new(times[0], *times.last().unwrap(), times.len() - 1)?;
        for (k, &t) in times.iter().enumerate() {
            if grid.index_of(t) != Some(k) {
                return Err(Error::GridMismatch(format!("row {k}: time {t} is not on a uniform grid")));
            }
        }
        Self::from_flat(grid, dim, values)
    }
}

/// Non-anticipative view of a path up to its current node: an optional
/// initial segment (history before the simulation start), the simulated
/// nodes strictly before the current one, and the current node. The path it
/// describes is the concatenation `prefix ⊗ simulated`.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    dim: usize,
    t_start: f64,
    dt: f64,
    prefix: Option<&'a Path>,
    head: &'a [f64],
    current: &'a [f64],
}

impl<'a> History<'a> {
    pub fn new(prefix: Option<&'a Path>, t_start: f64, dt: f64, head: &'a [f64], current: &'a [f64]) -> Self {
        let dim = current.len();
        debug_assert!(dim > 0 && head.len().is_multiple_of(dim));
        Self {
            dim,
            t_start,
            dt,
            prefix,
            head,
            current,
        }
    }

    /// A single-node history: the Markovian view of state `x` at time `t`.
    pub fn markov(t: f64, x: &'a [f64]) -> Self {
        Self::new(None, t, 1.0, &[], x)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> usize {
        self.head.len() / self.dim
    }

    pub fn time(&self) -> f64 {
        self.t_start + self.step() as f64 * self.dt
    }

    pub fn current(&self) -> &'a [f64] {
        self.current
    }

    pub fn prefix(&self) -> Option<&'a Path> {
        self.prefix
    }

    /// Simulated node `i ≤ step()`.
    pub fn node(&self, i: usize) -> &'a [f64] {
        let k = self.step();
        assert!(i <= k, "node {i} is in the future of step {k}");
        if i == k {
            self.current
        } else {
            &self.head[i * self.dim..(i + 1) * self.dim]
        }
    }

    /// Visits every node of the concatenated path in time order. The prefix's
    /// last node coincides with simulated node 0 and is visited once.
    pub fn for_each_node(&self, mut f: impl FnMut(f64, &[f64])) {
        if let Some(p) = self.prefix {
            let g = p.grid();
            for k in 0..g.n_steps() {
                f(g.node(k), p.node(k));
            }
        }
        for i in 0..=self.step() {
            f(self.t_start + i as f64 * self.dt, self.node(i));
        }
    }

    pub fn running_max(&self, j: usize) -> f64 {
        let mut m = f64::NEG_INFINITY;
        self.for_each_node(|_, x| m = m.max(x[j]));
        m
    }

    pub fn running_min(&self, j: usize) -> f64 {
        let mut m = f64::INFINITY;
        self.for_each_node(|_, x| m = m.min(x[j]));
        m
    }

    /// Trapezoidal integral of component `j` over the whole history.
    pub fn running_integral(&self, j: usize) -> f64 {
        let mut acc = 0.0;
        let mut last: Option<(f64, f64)> = None;
        self.for_each_node(|t, x| {
            if let Some((t0, x0)) = last {
                acc += 0.5 * (t - t0) * (x0 + x[j]);
            }
            last = Some((t, x[j]));
        });
        acc
    }

    /// `‖x‖_{∞,t}` over the whole history.
    pub fn sup_norm(&self) -> f64 {
        let mut m: f64 = 0.0;
        self.for_each_node(|_, x| m = m.max(norm(x)));
        m
    }

    /// Materialises the concatenated history as a [`Path`] on the simulated
    /// grid (prefix nodes are dropped; the simulated nodes start at the
    /// junction).
    pub fn simulated_path(&self) -> Path {
        let k = self.step().max(1);
        let mut values = self.head.to_vec();
        values.extend_from_slice(self.current);
        if self.step() == 0 {
            values.extend_from_slice(self.current);
        }
        let grid = TimeGrid::new(self.t_start, self.t_start + k as f64 * self.dt, k).expect("history grid is valid by construction");
        Path::from_flat(grid, self.dim, values).expect("history values are consistent")
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `x ⊗_s x'`: equals `x` up to `s`, then follows the increments of `x'`.
///
/// The result lives on `x`'s grid. `x'` must share the step size and end
/// time of `x`, and `s` must be a node of both grids.
pub fn concat(x: &Path, x_prime: &Path, s: f64) -> Result<Path> {
    if x.dim != x_prime.dim {
        return Err(Error::DimensionMismatch {
            expected: x.dim,
            got: x_prime.dim,
        });
    }
    let (g, gp) = (x.grid(), x_prime.grid());
    if (g.dt() - gp.dt()).abs() > NODE_TOL * g.dt() || (g.t_end() - gp.t_end()).abs() > NODE_TOL {
        return Err(Error::GridMismatch("concatenated paths must share step size and terminal time".into()));
    }
    let (Some(ks), Some(ks_p)) = (g.index_of(s), gp.index_of(s)) else {
        return Err(Error::GridMismatch(format!("s = {s} is not a node of both grids")));
    };
    let offset = ks - ks_p;
    let d = x.dim;
    let mut values = x.values.clone();
    let xs = x.node(ks).to_vec();
    let xps = x_prime.node(ks_p).to_vec();
    for k in ks + 1..g.n_nodes() {
        let src = x_prime.node(k - offset);
        for j in 0..d {
            values[k * d + j] = src[j] + xs[j] - xps[j];
        }
    }
    Path::from_flat(*g, d, values)
}

/// `‖x‖_{∞,s}`: the largest Euclidean norm of the interpolant on `[t_start, s]`.
/// The norm of a linear segment is convex, so nodes plus the endpoint `s`
/// suffice.
pub fn sup_norm(x: &Path, s: f64) -> f64 {
    let g = x.grid();
    let mut m: f64 = 0.0;
    for (k, t) in g.nodes().enumerate() {
        if t > s + NODE_TOL {
            break;
        }
        m = m.max(norm(x.node(k)));
    }
    if s > g.t_start() && g.index_of(s).is_none() {
        m = m.max(norm(&x.eval(s)));
    }
    m
}

/// The pseudo-distance `√|t2 − t1| + sup_r ‖x1(r ∧ t1) − x2(r ∧ t2)‖`.
///
/// Each path is stopped at its time argument and extended constantly outside
/// its grid. The difference of two piecewise-linear functions is piecewise
/// linear, so the supremum is attained on the union of both node sets and the
/// two stopping times.
pub fn d_infinity(t1: f64, x1: &Path, t2: f64, x2: &Path) -> f64 {
    let mut breaks: Vec<f64> = x1.grid().nodes().chain(x2.grid().nodes()).collect();
    breaks.push(t1);
    breaks.push(t2);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= NODE_TOL);
    let mut a = vec![0.0; x1.dim];
    let mut b = vec![0.0; x2.dim];
    let mut sup: f64 = 0.0;
    for &r in &breaks {
        x1.eval_into(r.min(t1), &mut a);
        x2.eval_into(r.min(t2), &mut b);
        let diff: f64 = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum();
        sup = sup.max(diff.sqrt());
    }
    (t2 - t1).abs().sqrt() + sup
}

/// The piecewise-linear interpolator through `points` placed at the grid nodes.
pub fn interpolate(points: &[Vec<f64>], grid: TimeGrid) -> Result<Path> {
    Path::from_nodes(grid, points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn grid_rejects_bad_spans() {
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        let g = unit_grid(4);
        assert_eq!(g.index_of(0.5), Some(2));
        assert_eq!(g.index_of(0.3), None);
        assert_eq!(g.node(4), 1.0);
    }

    #[test]
    fn concat_of_constants_is_the_first_constant() {
        let g = unit_grid(10);
        let x = Path::constant(g, &[2.0, -1.0]).unwrap();
        let xp = Path::constant(g, &[7.0, 3.0]).unwrap();
        for k in 0..=10 {
            let s = g.node(k);
            let c = concat(&x, &xp, s).unwrap();
            assert!(c.values().chunks(2).all(|v| v == [2.0, -1.0]));
        }
    }

    #[test]
    fn concat_at_terminal_time_keeps_terminal_value() {
        let g = unit_grid(4);
        let x = interpolate(&[vec![0.0], vec![1.0], vec![3.0], vec![2.0], vec![5.0]], g).unwrap();
        let xp = interpolate(&[vec![9.0], vec![1.0], vec![-3.0], vec![2.0], vec![4.0]], g).unwrap();
        let c = concat(&x, &xp, 1.0).unwrap();
        assert_eq!(c.terminal(), x.terminal());
    }

    #[test]
    fn concat_follows_increments_after_junction() {
        let g = unit_grid(2);
        let x = interpolate(&[vec![0.0], vec![0.5], vec![1.0]], g).unwrap();
        let xp = interpolate(&[vec![0.0], vec![1.0], vec![2.0]], g).unwrap();
        let c = concat(&x, &xp, 0.5).unwrap();
        assert_eq!(c.terminal(), &[1.5]);
    }

    #[test]
    fn concat_with_later_starting_path() {
        let g = unit_grid(4);
        let late = TimeGrid::new(0.5, 1.0, 2).unwrap();
        let x = Path::constant(g, &[1.0]).unwrap();
        let xp = interpolate(&[vec![10.0], vec![11.0], vec![13.0]], late).unwrap();
        let c = concat(&x, &xp, 0.5).unwrap();
        assert_eq!(c.values(), &[1.0, 1.0, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn concat_rejects_non_shared_node() {
        let g = unit_grid(4);
        let x = Path::constant(g, &[1.0]).unwrap();
        assert!(matches!(concat(&x, &x, 0.3), Err(Error::GridMismatch(_))));
        let other = Path::constant(unit_grid(5), &[1.0]).unwrap();
        assert!(matches!(concat(&x, &other, 0.0), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn sup_norm_examples() {
        let g = unit_grid(1);
        assert_eq!(sup_norm(&Path::constant(g, &[0.0, 0.0]).unwrap(), 1.0), 0.0);
        let x = interpolate(&[vec![1.0, 0.0], vec![0.0, -3.0]], g).unwrap();
        assert_eq!(sup_norm(&x, 1.0), 3.0);
        assert_eq!(sup_norm(&x, 0.0), 1.0);
    }

    #[test]
    fn d_infinity_examples() {
        let g = unit_grid(10);
        let z = Path::constant(g, &[0.0]).unwrap();
        assert_eq!(d_infinity(0.3, &z, 0.3, &z), 0.0);
        assert!((d_infinity(0.5, &z, 0.54, &z) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn interpolate_examples() {
        let g = unit_grid(1);
        let p = interpolate(&[vec![1.0, 2.0], vec![3.0, 6.0]], g).unwrap();
        assert_eq!(p.eval(0.5), vec![2.0, 4.0]);
        let c = interpolate(&[vec![4.0], vec![4.0]], g).unwrap();
        assert_eq!(c.eval(0.37), vec![4.0]);
        let tent = interpolate(&[vec![0.0], vec![1.0], vec![0.0]], unit_grid(2)).unwrap();
        assert_eq!(tent.eval(0.25), vec![0.5]);
        assert!(matches!(interpolate(&[vec![0.0]], g), Err(Error::LengthMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn history_running_functionals() {
        let g = unit_grid(4);
        let p = interpolate(&[vec![0.0], vec![2.0], vec![-1.0], vec![1.0], vec![0.5]], g).unwrap();
        let h = p.history(3);
        assert_eq!(h.step(), 3);
        assert!((h.time() - 0.75).abs() < 1e-15);
        assert_eq!(h.running_max(0), 2.0);
        assert_eq!(h.running_min(0), -1.0);
        // trapezoid: 0.25 * (1 + 0.5 + 0)
        assert!((h.running_integral(0) - 0.375).abs() < 1e-15);
        assert_eq!(h.sup_norm(), 2.0);
    }

    #[test]
    fn csv_round_trip() {
        let g = TimeGrid::new(0.0, 0.5, 5).unwrap();
        let p = Path::from_flat(g, 2, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2\n"));
        let back = Path::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }
}
