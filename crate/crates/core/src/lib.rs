//! Path-dependent singular stochastic control, approximated by bounded
//! controls and represented through penalized BSDEs.
//!
//! The crate is organised bottom-up:
//!
//! * [`pathspace`]: grids, piecewise-linear paths, concatenation, `d∞`.
//! * [`model`]: coefficient functionals, the constraint cone, the penalty
//!   `ρ`, the support function `δ` and the degenerate perturbation family.
//! * [`simulate`]: Euler–Maruyama ensembles and Girsanov reweighting.
//! * [`bsde`]: least-squares Monte Carlo for the penalized BSDE.
//! * [`control`]: grid dynamic programming oracles and value estimators.
//! * [`facelift`]: face-lift transform and the auxiliary `δ`-cost problem.

pub mod benchmark;
pub mod bsde;
pub mod control;
pub mod error;
pub mod facelift;
pub mod linalg;
pub mod model;
pub mod pathspace;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use pathspace::{History, Path, TimeGrid};
