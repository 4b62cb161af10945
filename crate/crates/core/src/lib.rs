//! Stationary marriage-market equilibrium with intra-household bargaining,
//! fertility choice, and CES home production.
//!
//! The layers build on each other:
//!
//! - [`primitives`] and [`grid`]: period utility, bargaining weight, home
//!   production, and wage discretization.
//! - [`static_alloc`]: within-period allocations of singles and couples.
//! - [`dynamics`]: couple and single value functions, childbirth policy, and
//!   the marriage rule.
//! - [`equilibrium`]: the stationary matching equilibrium, stationary
//!   distributions, and model moments.
//! - [`simulate`] and [`event_study`]: agent panels and the two-way fixed
//!   effects event study around first birth.
//! - [`calibrate`]: minimum-distance estimation and counterfactual
//!   decomposition.

pub mod calibrate;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod event_study;
pub mod grid;
pub mod io;
pub mod moments;
pub mod params;
pub mod primitives;
pub mod simulate;
pub mod static_alloc;

pub use error::{Error, Result};
pub use params::{ModelParams, SolverSettings};
