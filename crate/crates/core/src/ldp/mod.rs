//! Discrete large-deviation rate functions over reduced-order inflow paths
//! and the minimum-action search for the most probable unstart path.

mod optimize;
mod path;

use thiserror::Error;

use crate::solver::SolverError;

pub use optimize::{
    feasible_ramp, minimize_action, random_feasible_path, ActionOptions, ActionResult,
    ActionStatus, ConstraintForm, InitialGuess, IterationRecord,
};
pub use path::{
    asymptotic_probability, is_unstart, rate_discrete, rate_gradient, subsonic_bound, EventSpec,
    InflowPath, NoiseModel,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdpError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("outside the domain: {0}")]
    Domain(String),
    #[error("no feasible inflow path: {0}")]
    Infeasible(String),
}
