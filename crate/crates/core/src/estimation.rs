//! Sensor-side Kalman filter and its steady state.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::Result;
use crate::linalg::{self, inf_norm, symmetrize};
use crate::model::SystemModel;

/// Absolute ∞-norm tolerance on successive Riccati iterates.
pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 1_000_000;

/// Kalman filter state carried between prediction and update.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_pred: DVector<f64>,
    pub x_filt: DVector<f64>,
    pub p_pred: DMatrix<f64>,
    pub p_filt: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

impl FilterState {
    /// Prior `x̂_{0|-1} = x̄₀`, `P_{0|-1} = X₀`.
    pub fn initial(model: &SystemModel) -> Self {
        let (n, p) = (model.state_dim(), model.output_dim());
        Self {
            x_pred: model.x0_mean.clone(),
            x_filt: model.x0_mean.clone(),
            p_pred: model.x0_cov.clone(),
            p_filt: model.x0_cov.clone(),
            gain: DMatrix::zeros(n, p),
        }
    }
}

/// Time update: `x̂⁻ = A x̂ + B u`, `P⁻ = A P Aᵀ + W`.
pub fn kf_predict(state: &FilterState, model: &SystemModel, u_prev: &DVector<f64>) -> FilterState {
    let x_pred = &model.a * &state.x_filt + &model.b * u_prev;
    let p_pred = symmetrize(&(&model.a * &state.p_filt * model.a.transpose() + &model.w));
    FilterState { x_pred, p_pred, ..state.clone() }
}

/// Measurement update with gain `K = P⁻Cᵀ(CP⁻Cᵀ + V)⁻¹`.
pub fn kf_update(state: &FilterState, model: &SystemModel, y: &DVector<f64>) -> Result<FilterState> {
    let gain = kalman_gain(&state.p_pred, model)?;
    let innovation = y - &model.c * &state.x_pred;
    let x_filt = &state.x_pred + &gain * innovation;
    let n = model.state_dim();
    let p_filt = symmetrize(&((DMatrix::identity(n, n) - &gain * &model.c) * &state.p_pred));
    Ok(FilterState { x_filt, p_filt, gain, ..state.clone() })
}

fn kalman_gain(p_pred: &DMatrix<f64>, model: &SystemModel) -> Result<DMatrix<f64>> {
    let pct = p_pred * model.c.transpose();
    let innovation_cov = &model.c * &pct + &model.v;
    let inv = linalg::spd_inverse(&innovation_cov, "innovation covariance")?;
    Ok(pct * inv)
}

/// One step of the prediction-covariance Riccati recursion,
/// `P ↦ A (I − K C) P Aᵀ + W`, evaluated in Joseph form
/// `A [(I − KC) P (I − KC)ᵀ + K V Kᵀ] Aᵀ + W` so that no large terms cancel.
pub fn filter_riccati_step(model: &SystemModel, p_pred: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = model.state_dim();
    let gain = kalman_gain(p_pred, model)?;
    let ikc = DMatrix::identity(n, n) - &gain * &model.c;
    let p_filt = &ikc * p_pred * ikc.transpose() + &gain * &model.v * gain.transpose();
    Ok(symmetrize(&(&model.a * p_filt * model.a.transpose() + &model.w)))
}

/// Steady-state filter quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyStateFilter {
    /// Steady prediction covariance `P_∞`.
    pub p_inf: DMatrix<f64>,
    /// Steady gain `K_∞`.
    pub k_inf: DMatrix<f64>,
    /// Steady filtered covariance `F_∞ = (I − K_∞C)P_∞`.
    pub f_inf: DMatrix<f64>,
    /// Covariance of the comparison-error increment, `Π_η = K_∞ C P_∞`.
    pub pi_eta: DMatrix<f64>,
    /// `C P_∞ Cᵀ + V`.
    pub innovation_cov: DMatrix<f64>,
    pub iterations: usize,
    /// Last ‖P_{k+1} − P_k‖∞ of the iteration.
    pub residual: f64,
}

impl SteadyStateFilter {
    pub fn state_dim(&self) -> usize {
        self.p_inf.nrows()
    }

    /// ∞-norm residual of the filtering algebraic Riccati equation.
    pub fn are_residual(&self, model: &SystemModel) -> Result<f64> {
        let a = &model.a;
        let apc = a * &self.p_inf * model.c.transpose();
        let inv = linalg::spd_inverse(&(&model.c * &self.p_inf * model.c.transpose() + &model.v), "innovation covariance")?;
        let rhs = a * &self.p_inf * a.transpose() + &model.w - &apc * inv * apc.transpose();
        Ok(inf_norm(&(rhs - &self.p_inf)))
    }

    /// `K_∞ (C P_∞ Cᵀ + V) K_∞ᵀ`, the second expression for `Π_η`.
    pub fn pi_eta_innovation_form(&self) -> DMatrix<f64> {
        symmetrize(&(&self.k_inf * &self.innovation_cov * self.k_inf.transpose()))
    }
}

/// Solves the filtering Riccati equation by fixed-point iteration from `X₀`.
pub fn kf_steady_state(model: &SystemModel) -> Result<SteadyStateFilter> {
    let (p, iterations, residual) = linalg::riccati_fixed_point(
        model.x0_cov.clone(),
        RICCATI_TOL,
        RICCATI_MAX_ITER,
        "filter Riccati iteration",
        |p| filter_riccati_step(model, p),
    )?;
    assemble_filter(model, p, iterations, residual)
}

fn assemble_filter(model: &SystemModel, p_inf: DMatrix<f64>, iterations: usize, residual: f64) -> Result<SteadyStateFilter> {
    let n = model.state_dim();
    let innovation_cov = symmetrize(&(&model.c * &p_inf * model.c.transpose() + &model.v));
    let k_inf = kalman_gain(&p_inf, model)?;
    let f_inf = symmetrize(&((DMatrix::identity(n, n) - &k_inf * &model.c) * &p_inf));
    let mut ss = SteadyStateFilter {
        p_inf,
        k_inf,
        f_inf,
        pi_eta: DMatrix::zeros(n, n),
        innovation_cov,
        iterations,
        residual,
    };
    ss.pi_eta = eta_covariance(&ss);
    Ok(ss)
}

/// `Π_η = K_∞ C P_∞`, symmetrized.
///
/// `C P_∞` is recovered as `(K_∞ (C P_∞ Cᵀ + V))ᵀ` so the filter record alone
/// suffices; both are the same product `P_∞ Cᵀ`.
pub fn eta_covariance(ss: &SteadyStateFilter) -> DMatrix<f64> {
    let p_ct = &ss.k_inf * &ss.innovation_cov;
    symmetrize(&(&ss.k_inf * p_ct.transpose()))
}
