//! Certainty-equivalent LQ control and analytic cost evaluation.
//!
//! Transmission decisions do not depend on the control law, so the optimal
//! input is `u_k = −L_k x̂ᶜ_{k|k}` with the usual LQR gains. The cost picks up
//! two extra terms on top of the full-information LQR cost: the sensor's own
//! filtering error and the controller's comparison error between packets.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::analysis::{ConditionalErrorCov, MarkovAnalysis};
use crate::error::{Error, Result};
use crate::estimation::{kf_predict, kf_update, FilterState, SteadyStateFilter};
use crate::linalg::{self, inf_norm, symmetrize};
use crate::model::SystemModel;

pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 1_000_000;

struct RiccatiStep {
    s_next: DMatrix<f64>,
    gain: DMatrix<f64>,
    weight: DMatrix<f64>,
}

/// One backward step from `S_{k+1}`: returns `S_k`, `L_k`, and `M_k`.
fn riccati_step(model: &SystemModel, s: &DMatrix<f64>) -> Result<RiccatiStep> {
    let (a, b) = (&model.a, &model.b);
    let bts = b.transpose() * s;
    let g = symmetrize(&(&bts * b + &model.r));
    let g_inv = linalg::spd_inverse(&g, "BᵀSB + R")?;
    let gain = &g_inv * &bts * a;
    // AᵀSA + Q − AᵀSB·L, written as a sum of PSD terms so nothing cancels.
    let closed = a - b * &gain;
    let s_next = symmetrize(&(closed.transpose() * s * &closed + &model.q + gain.transpose() * &model.r * &gain));
    let weight = symmetrize(&(gain.transpose() * &g * &gain));
    Ok(RiccatiStep { s_next, gain, weight })
}

/// Finite-horizon gains from the backward recursion `S_N = Q_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSynthesis {
    /// `S_0, ..., S_N`.
    pub s_seq: Vec<DMatrix<f64>>,
    /// `L_0, ..., L_{N−1}`.
    pub l_seq: Vec<DMatrix<f64>>,
    /// `M_k = L_kᵀ (BᵀS_{k+1}B + R) L_k` for `k = 0..N−1`.
    pub m_seq: Vec<DMatrix<f64>>,
}

impl HorizonSynthesis {
    pub fn horizon(&self) -> usize {
        self.l_seq.len()
    }
}

pub fn riccati_backward(model: &SystemModel, horizon: usize) -> Result<HorizonSynthesis> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    let mut s_seq = vec![model.qf.clone()];
    let mut l_seq = Vec::with_capacity(horizon);
    let mut m_seq = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let step = riccati_step(model, s_seq.last().expect("non-empty"))?;
        s_seq.push(step.s_next);
        l_seq.push(step.gain);
        m_seq.push(step.weight);
    }
    s_seq.reverse();
    l_seq.reverse();
    m_seq.reverse();
    Ok(HorizonSynthesis { s_seq, l_seq, m_seq })
}

/// Stationary control gains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSynthesis {
    pub s_inf: DMatrix<f64>,
    pub l_inf: DMatrix<f64>,
    pub m_inf: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl ControlSynthesis {
    /// ∞-norm residual of the control algebraic Riccati equation.
    pub fn are_residual(&self, model: &SystemModel) -> Result<f64> {
        Ok(inf_norm(&(riccati_step(model, &self.s_inf)?.s_next - &self.s_inf)))
    }

    /// `(BᵀS_∞B + R)⁻¹ BᵀS_∞A` recomputed from `S_∞`.
    pub fn gain_from_cost(&self, model: &SystemModel) -> Result<DMatrix<f64>> {
        Ok(riccati_step(model, &self.s_inf)?.gain)
    }
}

/// Iterates the control Riccati map from `S = Q` to its fixed point.
pub fn control_steady_state(model: &SystemModel) -> Result<ControlSynthesis> {
    let (s_inf, iterations, residual) = linalg::riccati_fixed_point(
        model.q.clone(),
        RICCATI_TOL,
        RICCATI_MAX_ITER,
        "control Riccati iteration",
        |s| Ok(riccati_step(model, s)?.s_next),
    )?;
    let last = riccati_step(model, &s_inf)?;
    Ok(ControlSynthesis { s_inf, l_inf: last.gain, m_inf: last.weight, iterations, residual })
}

/// `u = −L x̂`.
pub fn control_action(gain: &DMatrix<f64>, xhat: &DVector<f64>) -> DVector<f64> {
    -(gain * xhat)
}

/// Infinite-horizon average cost split into its three sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    /// `Tr(S_∞ W)`: cost of the process noise under full information.
    pub base: f64,
    /// `Tr(F_∞ M_∞)`: sensor filtering error.
    pub filter_term: f64,
    /// `Σ_{i≥1} π(i) Tr(M_∞ Σ_e(i))`: error from withheld packets.
    pub trigger_term: f64,
    pub total: f64,
}

pub fn infinite_horizon_cost(
    cs: &ControlSynthesis,
    ss: &SteadyStateFilter,
    ma: &MarkovAnalysis,
    cec: &ConditionalErrorCov,
    w: &DMatrix<f64>,
) -> Result<CostBreakdown> {
    let n = cs.s_inf.nrows();
    if ss.state_dim() != n || w.nrows() != n || cec.sigmas.iter().any(|s| s.nrows() != n) {
        return Err(Error::Dimension {
            first: "control synthesis",
            second: "filter",
            detail: format!("state dimension {n} is not shared by all inputs"),
        });
    }
    if cec.sigmas.len() != ma.pi.len() {
        return Err(Error::Dimension {
            first: "stationary distribution",
            second: "conditional covariances",
            detail: format!("{} states vs {} covariances", ma.pi.len(), cec.sigmas.len()),
        });
    }
    let base = (&cs.s_inf * w).trace();
    let filter_term = (&ss.f_inf * &cs.m_inf).trace();
    let trigger_term: f64 = ma
        .pi
        .iter()
        .zip(&cec.sigmas)
        .skip(1)
        .map(|(p, sigma)| p * (&cs.m_inf * sigma).trace())
        .sum();
    Ok(CostBreakdown { base, filter_term, trigger_term, total: base + filter_term + trigger_term })
}

/// Which sensor error covariance enters the finite-horizon cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterCovariance {
    /// `P_{k|k} = F_∞` at every step (sensor filter already in steady state).
    #[default]
    SteadyState,
    /// `P_{k|k}` from the Riccati recursion started at `X₀`.
    Transient,
}

/// Distribution of `τ_k` for `k = 0..horizon`, starting from `τ_{-1} = 0`.
pub fn tau_marginals(ma: &MarkovAnalysis, horizon: usize) -> Vec<Vec<f64>> {
    let s = ma.pi.len();
    let mut dist: Vec<f64> = (0..s).map(|j| ma.p_lambda[(0, j)]).collect();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next: Vec<f64> = (0..s)
            .map(|j| (0..s).map(|i| dist[i] * ma.p_lambda[(i, j)]).sum())
            .collect();
        out.push(std::mem::replace(&mut dist, next));
    }
    out
}

/// Expected minimum cost `J_N` of the finite-horizon problem.
#[allow(clippy::too_many_arguments)]
pub fn finite_horizon_cost(
    hs: &HorizonSynthesis,
    ss: &SteadyStateFilter,
    ma: &MarkovAnalysis,
    cec: &ConditionalErrorCov,
    model: &SystemModel,
    horizon: usize,
    filter_cov: FilterCovariance,
) -> Result<f64> {
    if hs.horizon() != horizon {
        return Err(Error::InvalidInput(format!(
            "gains cover {} steps, horizon is {horizon}",
            hs.horizon()
        )));
    }
    if cec.sigmas.len() != ma.pi.len() {
        return Err(Error::Dimension {
            first: "stationary distribution",
            second: "conditional covariances",
            detail: format!("{} states vs {} covariances", ma.pi.len(), cec.sigmas.len()),
        });
    }
    let s0 = &hs.s_seq[0];
    let mut cost = model.x0_mean.dot(&(s0 * &model.x0_mean)) + (s0 * &model.x0_cov).trace();

    let mut kf = FilterState::initial(model);
    let zero_u = DVector::zeros(model.input_dim());
    let zero_y = DVector::zeros(model.output_dim());
    let marginals = tau_marginals(ma, horizon);
    for k in 0..horizon {
        let m_k = &hs.m_seq[k];
        cost += (&hs.s_seq[k + 1] * &model.w).trace();
        let p_filt = match filter_cov {
            FilterCovariance::SteadyState => ss.f_inf.clone(),
            FilterCovariance::Transient => {
                kf = kf_update(&kf, model, &zero_y)?;
                let p = kf.p_filt.clone();
                kf = kf_predict(&kf, model, &zero_u);
                p
            }
        };
        cost += (&p_filt * m_k).trace();
        cost += marginals[k]
            .iter()
            .zip(&cec.sigmas)
            .skip(1)
            .map(|(p, sigma)| p * (m_k * sigma).trace())
            .sum::<f64>();
    }
    Ok(cost)
}
