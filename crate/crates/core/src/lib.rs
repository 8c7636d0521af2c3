//! Rare-event analysis of scramjet unstart.
//!
//! - [`engine`], [`solver`]: quasi-1D Euler engine model and its
//!   finite-volume integrator.
//! - [`ldp`]: discrete rate functions over inflow paths and the
//!   minimum-action search.
//! - [`sampling`]: plain and importance-sampling Monte Carlo estimators.
//! - [`config`], [`studies`], [`cli`]: run configuration, reference studies
//!   and the command-line front end.

pub mod cli;
pub mod config;
pub mod engine;
pub mod ldp;
pub mod sampling;
pub mod scenario;
pub mod solver;
pub mod studies;
