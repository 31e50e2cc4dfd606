//! Stochastic event trigger and time-out counter.
//!
//! At every step the sensor compares its filtered estimate with the
//! controller's prediction. The packet is withheld with probability
//! `exp(−λ‖e‖²)`; after `T` silent steps a transmission is forced.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Probability of *not* triggering for comparison error `e`.
pub fn non_trigger_probability(e_pred: &DVector<f64>, lambda: f64) -> f64 {
    (-lambda * e_pred.norm_squared()).exp()
}

/// Trigger decision `δ` for a caller-supplied uniform draw in `[0, 1)`.
///
/// Returns `false` (no trigger) iff `draw ≤ exp(−λ⟨e, e⟩)`.
pub fn trigger_decision(e_pred: &DVector<f64>, lambda: f64, uniform_draw: f64) -> Result<bool> {
    if e_pred.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("comparison error has non-finite entries".into()));
    }
    Ok(uniform_draw > non_trigger_probability(e_pred, lambda))
}

/// Elapsed-time counter `τ_k` with the latest decision and transmission flag.
///
/// `tau == 0` exactly when the latest step transmitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchedulerState {
    pub tau: usize,
    pub last_decision: bool,
    pub last_sigma: bool,
}

impl SchedulerState {
    /// State before the first step: `τ_{-1} = 0`.
    pub fn initial() -> Self {
        Self { tau: 0, last_decision: true, last_sigma: true }
    }
}

impl Default for SchedulerState {
    fn default() -> Self {
        Self::initial()
    }
}

/// Transmission flag: `σ_k = 1` iff `δ_k = 1` or `τ_{k-1} = T`.
pub fn transmission(prev_tau: usize, delta: bool, timeout: usize) -> bool {
    delta || prev_tau >= timeout
}

/// Advances the counter: reset on a trigger or time-out, otherwise increment.
pub fn advance_tau(state: SchedulerState, delta: bool, timeout: usize) -> SchedulerState {
    let tau = if delta || state.tau >= timeout { 0 } else { state.tau + 1 };
    SchedulerState {
        tau,
        last_decision: delta,
        last_sigma: transmission(state.tau, delta, timeout),
    }
}

/// The comparison errors at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonError {
    /// Sensor estimate minus controller prediction.
    pub e_pred: DVector<f64>,
    /// Sensor estimate minus controller estimate; zero after a transmission.
    pub e_filt: DVector<f64>,
}
