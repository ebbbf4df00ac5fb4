//! Nominal and robust tuning of LSM trees.
//!
//! [`cost_model`] predicts the I/O cost of a design for a workload,
//! [`nominal`] and [`robust`] search the design space, [`bench`] builds
//! workload sets, [`eval`] compares tunings across them and [`sim`] is an
//! in-memory LSM tree that counts I/Os to check the model against.

pub mod bench;
pub mod cost_model;
pub mod error;
pub mod eval;
pub mod nominal;
pub mod robust;
pub mod scalar;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use nominal::{Family, SolverStatus, TuningBounds};
pub use scalar::Scalar;
pub use solver::SolverOptions;

pub type Workload = cost_model::Workload<f64>;
pub type SystemParams = cost_model::SystemParams<f64>;
pub type LsmDesign = cost_model::LsmDesign<f64>;
pub type CostVector = cost_model::CostVector<f64>;
pub type Policy = cost_model::Policy<f64>;
pub type UncertaintyRegion = robust::UncertaintyRegion<f64>;
pub use nominal::{TuningProblem, TuningResult};
pub use robust::RobustResult;
