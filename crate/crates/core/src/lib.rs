//! Nash-implementation mechanisms for multi-rate multicast rate allocation.
//!
//! [`centralized`] solves the welfare problem and certifies it with KKT
//! multipliers, [`mechanism`] maps agent messages to allocations and taxes,
//! and [`equilibrium`] builds and stress-tests the equilibria those taxes
//! induce.

// Index loops mirror the per-link sums; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod centralized;
pub mod equilibrium;
pub mod mechanism;
pub mod model;
pub mod parallel;

/// Crate version, echoed in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
