//! Security-investment optimization for networks of interdependent systems
//! under mean-field SIS dynamics.
//!
//! The crate computes, for a weighted dependence graph with per-node attack,
//! recovery and cost parameters:
//!
//! - the steady-state infection probabilities for given investments,
//! - certified lower bounds on the minimal average cost via two equivalent
//!   convex relaxations (an M-matrix shift formulation and a smooth
//!   exponential-form one solved by a log-barrier Newton method),
//! - local minimizers via a reduced gradient method and sequential convex
//!   programming, giving upper bounds and optimality-gap reports,
//! - the full decision pipeline for the no-primary-attack case, including
//!   the minimum suppression budget,
//! - a benchmark harness and CLI around all of the above.

pub mod barrier;
pub mod bench;
pub mod lambda_zero;
pub mod local_search;
pub mod mmatrix;
pub mod model;
pub mod relax;
pub mod report;
pub mod sis;
pub mod sparse;

#[cfg(test)]
pub(crate) mod testutil;

pub use model::{generate_scale_free, parse_instance, serialize_instance, NetworkInstance, ScaleFreeConfig};
pub use sis::{average_cost, equilibrium, EquilibriumOptions, EquilibriumState};
