//! Empirical space and time regularity of a value field.
//!
//! Space: difference ratios `|v(t, x + h e) − v(t, x)| / h`.
//! Time: the `L¹` modulus `E|v(t + τ, X_{t+τ}) − v(t, x)|` along the
//! uncontrolled Gaussian transition `X_{t+τ} = x + μτ + σ√τ ξ e`, with the
//! expectation taken by composite Simpson on `ξ ∈ [−8, 8]`. For a field
//! that is Lipschitz in space and regular in time the modulus scales like
//! `√τ`.

use serde::Serialize;

use super::grid_dp::DpSolution;
use crate::benchmark;
use crate::error::{Error, Result};
use crate::quadrature::NormalExpectation;
use crate::stats;

pub trait ValueField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, x: &[f64]) -> f64;
}

impl ValueField for DpSolution {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Linear in time between nodes.
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        let g = &self.grid;
        let s = ((t - g.t_start()) / g.dt()).clamp(0.0, g.n_steps() as f64);
        let k = (s.floor() as usize).min(g.n_steps() - 1);
        let w = s - k as f64;
        let a = self.value_at(k, x);
        if w < 1e-9 {
            return a;
        }
        (1.0 - w) * a + w * self.value_at(k + 1, x)
    }
}

/// `E[ĝ(x + √(T−t) ξ)]`: the singular-limit value of the benchmark.
pub struct LiftedOracleField {
    pub tol: f64,
}

impl ValueField for LiftedOracleField {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, t: f64, x: &[f64]) -> f64 {
        benchmark::lifted_value(x[0], (benchmark::T - t).max(0.0), self.tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityProbe {
    pub t: f64,
    pub x: Vec<f64>,
    /// Coordinate along which space and noise are probed.
    pub axis: usize,
    pub mu: f64,
    pub sigma: f64,
    pub h_list: Vec<f64>,
    pub tau_list: Vec<f64>,
    pub panels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpacePoint {
    pub h: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimePoint {
    pub tau: f64,
    /// `E|v(t+τ, X) − v(t, x)|`.
    pub l1_modulus: f64,
    /// `|E v(t+τ, X) − v(t, x)|`.
    pub mean_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub space: Vec<SpacePoint>,
    pub max_ratio: f64,
    pub time: Vec<TimePoint>,
    /// Log-log slope of the `L¹` modulus against `τ`.
    pub holder_exponent: f64,
}

pub fn regularity_probe(field: &dyn ValueField, probe: &RegularityProbe) -> Result<RegularityReport> {
    if probe.x.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: probe.x.len(),
        });
    }
    if probe.axis >= field.dim() {
        return Err(Error::invalid("axis", "probe axis exceeds the state dimension"));
    }
    if probe.tau_list.len() < 2 || probe.tau_list.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::invalid("tau_list", "need at least two positive time steps"));
    }
    if probe.h_list.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::invalid("h_list", "space steps must be positive"));
    }
    let v0 = field.value(probe.t, &probe.x);
    let shifted = |dx: f64| {
        let mut y = probe.x.clone();
        y[probe.axis] += dx;
        y
    };
    let space: Vec<SpacePoint> = probe
        .h_list
        .iter()
        .map(|&h| SpacePoint {
            h,
            ratio: (field.value(probe.t, &shifted(h)) - v0).abs() / h,
        })
        .collect();
    let quad = NormalExpectation::new(probe.panels.max(16));
    let time: Vec<TimePoint> = probe
        .tau_list
        .iter()
        .map(|&tau| {
            let t1 = probe.t + tau;
            let step = |xi: f64| field.value(t1, &shifted(probe.mu * tau + probe.sigma * tau.sqrt() * xi)) - v0;
            TimePoint {
                tau,
                l1_modulus: quad.expect(|xi| step(xi).abs()),
                mean_shift: quad.expect(step).abs(),
            }
        })
        .collect();
    let taus: Vec<f64> = time.iter().map(|p| p.tau).collect();
    let mods: Vec<f64> = time.iter().map(|p| p.l1_modulus).collect();
    Ok(RegularityReport {
        max_ratio: space.iter().map(|p| p.ratio).fold(0.0, f64::max),
        space,
        time,
        holder_exponent: stats::loglog_slope(&taus, &mods),
    })
}

/// Space and time constants calibrated on pilot points and verified on
/// fresh ones: `|v(t, x + h e) − v(t, x)| ≤ C_x h` and
/// `|v(t + τ, x) − v(t, x)| ≤ C_t √τ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibratedBounds {
    pub c_space: f64,
    pub c_time: f64,
    pub fresh_space: f64,
    pub fresh_time: f64,
    pub holds: bool,
}

pub fn calibrated_bounds(
    field: &dyn ValueField,
    pilot: &[(f64, Vec<f64>)],
    fresh: &[(f64, Vec<f64>)],
    h: f64,
    tau: f64,
    safety: f64,
) -> CalibratedBounds {
    let ratios = |pts: &[(f64, Vec<f64>)]| {
        pts.iter().fold((0.0f64, 0.0f64), |(a, b), (t, x)| {
            let v = field.value(*t, x);
            let mut y = x.clone();
            y[0] += h;
            let rs = (field.value(*t, &y) - v).abs() / h;
            let rt = (field.value(t + tau, x) - v).abs() / tau.sqrt();
            (a.max(rs), b.max(rt))
        })
    };
    let (ps, pt) = ratios(pilot);
    let (fs, ft) = ratios(fresh);
    let (c_space, c_time) = (ps * safety, pt * safety);
    CalibratedBounds {
        c_space,
        c_time,
        fresh_space: fs,
        fresh_time: ft,
        holds: fs <= c_space && ft <= c_time,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Affine;
    impl ValueField for Affine {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, t: f64, x: &[f64]) -> f64 {
            2.0 * x[0] + t
        }
    }

    #[test]
    fn affine_field_has_half_exponent_and_exact_ratios() {
        let probe = RegularityProbe {
            t: 0.0,
            x: vec![0.0],
            axis: 0,
            mu: 0.0,
            sigma: 1.0,
            h_list: vec![0.1, 0.01],
            tau_list: vec![1e-6, 1e-5, 1e-4],
            panels: 400,
        };
        let r = regularity_probe(&Affine, &probe).unwrap();
        for p in &r.space {
            assert!((p.ratio - 2.0).abs() < 1e-9);
        }
        // E|2√τξ + τ| ≈ 2√τ·√(2/π) for small τ.
        assert!((r.holder_exponent - 0.5).abs() < 0.01, "{}", r.holder_exponent);
    }
}
