//! Online facility assignment on r x c Manhattan grids.
//!
//! Requests arrive over time and are irrevocably assigned to capacitated
//! facilities, paying L1 distance. The crate provides the online policies,
//! a batched min-cost-flow policy, an exact offline optimum, adversarial
//! workload generators, failure-mode metrics and a reproducible experiment
//! runner.

pub mod adversary;
pub mod algorithms;
pub mod bmcf;
pub mod engine;
pub mod error;
pub mod grid;
pub mod harness;
pub mod mcf;
pub mod metrics;
pub mod opt_oracle;
pub mod parallel;

pub use error::{OfaError, Result};
pub use grid::{diameter, manhattan_distance, CapacityLedger, Facility, GridInstance, GridPoint};
