//! Value estimators for the bounded-control problems and the experiments
//! built on them.
//!
//! * [`grid_dp`]: backward induction on a space grid (`d ≤ 2`, Markovian).
//! * [`estimators`]: Monte Carlo under a policy and the [`ValueEstimator`]
//!   registry (grid DP, constant-policy search, penalized BSDE).
//! * [`experiments`]: dynamic-programming residual, convex ordering in the
//!   noise level and the degenerate limit ladder.
//! * [`regularity`]: Lipschitz and time-modulus probes of a value field.

pub mod estimators;
pub mod experiments;
pub mod grid_dp;
pub mod regularity;

use serde::Serialize;

pub use estimators::{estimate_value_mc, BsdeEstimator, GridDpEstimator, McPolicySearch, ValueEstimator, ValueProblem};
pub use experiments::{convex_order_experiment, degenerate_sup_ladder, dpp_residual, ConvexOrderReport, DegenerateLadderReport, DppReport};
pub use grid_dp::{solve_grid_dp, DpSolution, GridDpSpec, LevelRule, SpaceGrid, Timing};
pub use regularity::{calibrated_bounds, regularity_probe, CalibratedBounds, LiftedOracleField, RegularityProbe, RegularityReport, ValueField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GridDp,
    MonteCarlo,
    PolicySearch,
    Bsde,
    Quadrature,
}

/// A value with its standard error (0 for deterministic methods).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub se: f64,
    pub method: Method,
    pub meta: serde_json::Value,
}
