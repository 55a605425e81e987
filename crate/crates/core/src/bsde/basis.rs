//! Regression features and bases.
//!
//! A [`BasisSpec`] is fitted to the feature sample of one time step and
//! yields a [`Basis`]: a fixed list of functions that can then be evaluated
//! anywhere, including at states the sample never visited.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::pathspace::History;

/// Feature map `(t, history) → ℝ^m`.
#[derive(Clone)]
pub enum FeatureMap {
    /// The current state.
    Current,
    /// Per component: current value, running maximum, running integral.
    PathSummary,
    Custom {
        dim: usize,
        f: Arc<dyn Fn(&History<'_>, &mut [f64]) + Send + Sync>,
    },
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMap::Current => write!(f, "Current"),
            FeatureMap::PathSummary => write!(f, "PathSummary"),
            FeatureMap::Custom { dim, .. } => write!(f, "Custom({dim})"),
        }
    }
}

impl FeatureMap {
    pub fn dim(&self, state_dim: usize) -> usize {
        match self {
            FeatureMap::Current => state_dim,
            FeatureMap::PathSummary => 3 * state_dim,
            FeatureMap::Custom { dim, .. } => *dim,
        }
    }

    pub fn compute(&self, h: &History<'_>, out: &mut [f64]) {
        match self {
            FeatureMap::Current => out.copy_from_slice(h.current()),
            FeatureMap::PathSummary => {
                let d = h.dim();
                for j in 0..d {
                    out[3 * j] = h.current()[j];
                    out[3 * j + 1] = h.running_max(j);
                    out[3 * j + 2] = h.running_integral(j);
                }
            }
            FeatureMap::Custom { f, .. } => f(h, out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum BasisFamily {
    /// Total-degree monomials of the standardised features.
    Polynomial { degree: usize },
    /// Tensor-product piecewise-linear hats on a uniform knot grid spanning
    /// the sample range of each feature (`bins` cells per feature).
    LocalBins { bins: usize },
}

impl BasisFamily {
    pub fn parse(name: &str, size: usize) -> Result<Self> {
        match name {
            "polynomial" => Ok(BasisFamily::Polynomial { degree: size }),
            "local-bins" => Ok(BasisFamily::LocalBins { bins: size.max(1) }),
            other => Err(Error::invalid("basis", format!("unknown family `{other}` (polynomial, local-bins)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub features: FeatureMap,
    /// Weight of the second-difference smoothing penalty for local bins,
    /// relative to the mean diagonal of the normal matrix.
    pub ridge: f64,
}

impl BasisSpec {
    pub fn local_bins(bins: usize) -> Self {
        Self {
            family: BasisFamily::LocalBins { bins },
            features: FeatureMap::Current,
            ridge: 1e-6,
        }
    }

    pub fn polynomial(degree: usize) -> Self {
        Self {
            family: BasisFamily::Polynomial { degree },
            features: FeatureMap::Current,
            ridge: 0.0,
        }
    }

    pub fn with_features(mut self, features: FeatureMap) -> Self {
        self.features = features;
        self
    }

    /// Fits the basis to `n` feature rows of width `m`. Each fallback
    /// `level` halves the bin count or lowers the degree by one; `None`
    /// once nothing coarser than the constant remains.
    pub fn build(&self, feats: &[f64], m: usize, level: usize) -> Option<Box<dyn Basis>> {
        let ranges = feature_ranges(feats, m);
        match self.family {
            BasisFamily::Polynomial { degree } => {
                if level > degree {
                    return None;
                }
                Some(Box::new(PolyBasis::new(&ranges, degree - level)))
            }
            BasisFamily::LocalBins { bins } => {
                let b = bins >> level;
                if b == 0 {
                    return (bins >> (level - 1) >= 1 && level > 0).then(|| Box::new(PolyBasis::new(&ranges, 0)) as Box<dyn Basis>);
                }
                Some(Box::new(HatBasis::new(feats, m, &ranges, b)))
            }
        }
    }
}

/// Per-feature `(min, max, mean, std)` of a sample.
#[derive(Debug, Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
    mean: f64,
    std: f64,
}

fn feature_ranges(feats: &[f64], m: usize) -> Vec<Range> {
    let n = feats.len().checked_div(m).unwrap_or(0);
    (0..m)
        .map(|a| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut s = 0.0;
            for i in 0..n {
                let v = feats[i * m + a];
                lo = lo.min(v);
                hi = hi.max(v);
                s += v;
            }
            let mean = s / n as f64;
            let var = (0..n).map(|i| (feats[i * m + a] - mean).powi(2)).sum::<f64>() / n as f64;
            Range {
                lo,
                hi,
                mean,
                std: var.sqrt(),
            }
        })
        .collect()
}

/// Whether a feature carries information at this step (the sample is not
/// a single point).
fn varies(r: &Range) -> bool {
    r.hi - r.lo > 1e-12 * (1.0 + r.lo.abs().max(r.hi.abs()))
}

pub trait Basis: Send + Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Nonzero basis values at `feat` as `(index, value)` pairs.
    fn eval(&self, feat: &[f64], out: &mut Vec<(usize, f64)>);
    /// Rows of the smoothing penalty, each a sparse stencil.
    fn penalty_rows(&self) -> Vec<Vec<(usize, f64)>> {
        Vec::new()
    }
    fn describe(&self) -> String;
}

struct PolyBasis {
    active: Vec<(usize, f64, f64)>,
    exponents: Vec<Vec<u32>>,
}

impl PolyBasis {
    fn new(ranges: &[Range], degree: usize) -> Self {
        let active: Vec<_> = ranges
            .iter()
            .enumerate()
            .filter(|(_, r)| varies(r) && r.std > 0.0)
            .map(|(a, r)| (a, r.mean, r.std))
            .collect();
        let mut exponents = Vec::new();
        let mut cur = vec![0u32; active.len()];
        enumerate_degrees(&mut cur, 0, degree as u32, &mut exponents);
        exponents.sort_by_key(|e| e.iter().sum::<u32>());
        Self { active, exponents }
    }
}

fn enumerate_degrees(cur: &mut Vec<u32>, pos: usize, left: u32, out: &mut Vec<Vec<u32>>) {
    if pos == cur.len() {
        out.push(cur.clone());
        return;
    }
    for e in 0..=left {
        cur[pos] = e;
        enumerate_degrees(cur, pos + 1, left - e, out);
    }
    cur[pos] = 0;
}

impl Basis for PolyBasis {
    fn len(&self) -> usize {
        self.exponents.len()
    }

    fn eval(&self, feat: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        let z: Vec<f64> = self.active.iter().map(|&(a, mean, std)| (feat[a] - mean) / std).collect();
        for (i, e) in self.exponents.iter().enumerate() {
            let v = z.iter().zip(e).map(|(x, &p)| x.powi(p as i32)).product();
            out.push((i, v));
        }
    }

    fn describe(&self) -> String {
        let deg = self.exponents.last().map_or(0, |e| e.iter().sum::<u32>());
        format!("polynomial(degree={deg}, features={}, size={})", self.active.len(), self.len())
    }
}

struct HatAxis {
    feature: usize,
    lo: f64,
    h: f64,
    bins: usize,
}

struct HatBasis {
    axes: Vec<HatAxis>,
    strides: Vec<usize>,
    len: usize,
}

impl HatBasis {
    /// The outer knots sit at trimmed order statistics so each end cell
    /// holds about an eighth of an average cell; beyond them the end
    /// segments extend linearly. Knots at the sample extremes leave end
    /// cells with a handful of points whose noisy slopes, once evaluated at
    /// shifted states, grow from step to step.
    fn new(feats: &[f64], m: usize, ranges: &[Range], bins: usize) -> Self {
        let n = feats.len() / m.max(1);
        let trim = n / (8 * bins);
        let axes: Vec<HatAxis> = ranges
            .iter()
            .enumerate()
            .filter(|(_, r)| varies(r))
            .map(|(a, r)| {
                let (mut lo, mut hi) = (r.lo, r.hi);
                if trim > 0 {
                    let mut col: Vec<f64> = (0..n).map(|i| feats[i * m + a]).collect();
                    let (_, &mut l, _) = col.select_nth_unstable_by(trim, f64::total_cmp);
                    let (_, &mut h, _) = col.select_nth_unstable_by(n - 1 - trim, f64::total_cmp);
                    if h - l > 1e-12 * (1.0 + l.abs().max(h.abs())) {
                        (lo, hi) = (l, h);
                    }
                }
                HatAxis {
                    feature: a,
                    lo,
                    h: (hi - lo) / bins as f64,
                    bins,
                }
            })
            .collect();
        let mut strides = Vec::with_capacity(axes.len());
        let mut len = 1;
        for ax in &axes {
            strides.push(len);
            len *= ax.bins + 1;
        }
        Self { axes, strides, len }
    }
}

impl Basis for HatBasis {
    fn len(&self) -> usize {
        self.len
    }

    fn eval(&self, feat: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.push((0, 1.0));
        for (ax, &stride) in self.axes.iter().zip(&self.strides) {
            let s = (feat[ax.feature] - ax.lo) / ax.h;
            // Clamping the cell but not the weight extrapolates linearly.
            let i = (s.floor().max(0.0) as usize).min(ax.bins - 1);
            let w = s - i as f64;
            let n = out.len();
            for e in 0..n {
                let (idx, v) = out[e];
                out[e] = (idx + i * stride, v * (1.0 - w));
                out.push((idx + (i + 1) * stride, v * w));
            }
        }
    }

    fn penalty_rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = Vec::new();
        for (ax, &stride) in self.axes.iter().zip(&self.strides) {
            if ax.bins < 2 {
                continue;
            }
            for base in 0..self.len {
                let coord = (base / stride) % (ax.bins + 1);
                if coord + 2 > ax.bins {
                    continue;
                }
                rows.push(vec![(base, 1.0), (base + stride, -2.0), (base + 2 * stride, 1.0)]);
            }
        }
        rows
    }

    fn describe(&self) -> String {
        format!(
            "local-bins(bins={}, features={}, size={})",
            self.axes.first().map_or(0, |a| a.bins),
            self.axes.len(),
            self.len
        )
    }
}
