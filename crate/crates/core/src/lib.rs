//! Stochastic event-triggered LQG control.
//!
//! A sensor runs a steady-state Kalman filter and sends its estimate to the
//! controller at random: the packet is withheld with probability
//! `exp(−λ‖e‖²)` where `e` is the gap between the sensor estimate and the
//! controller's prediction, with a forced send after `T` silent steps. This
//! crate computes the resulting communication rate and LQG cost in closed
//! form and checks them against a seeded closed-loop simulator.

pub mod analysis;
pub mod control;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod scheduling;
pub mod simulation;

pub use error::{Error, Result};
pub use model::{validate_model, SchedulerParams, SystemModel, ValidationReport};
pub use pipeline::{analyze, analyze_with, cost_tradeoff_curve, AnalyticResult, Gains};
pub use simulation::{run_experiment, run_experiment_with, ExperimentResult, SimConfig};
