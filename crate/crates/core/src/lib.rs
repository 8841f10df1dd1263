//! Multi-fidelity Gaussian-process search for stationary targets on a floor.
//!
//! A vehicle senses a 2D score field from several altitudes. Coarse, high
//! altitudes see wide areas with strongly correlated readings; low altitudes
//! resolve detail. The search alternates epochs of
//!
//! 1. greedy max-variance planning with fidelity switching ([`planner`]),
//! 2. open measurement tours per altitude ([`router`]),
//! 3. exact multi-fidelity GP inference ([`inference`]),
//! 4. confidence-bound classification and elimination of empty cells ([`classifier`]),
//!
//! until 99% of the grid is classified ([`mission`]). [`field_model`] holds the
//! prior and a synthetic environment used in place of a real camera.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod cli;
pub mod config;
pub mod error;
pub mod export;
pub mod field_model;
pub mod inference;
pub mod linalg;
pub mod mission;
pub mod planner;
pub mod router;

pub use error::{Error, Result};
