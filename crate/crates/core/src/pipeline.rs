//! Analytic rate and cost for one model over a grid of λ values.

use serde::Serialize;

use crate::analysis::{conditional_error_cov, transition_chain, ConditionalErrorCov, MarkovAnalysis};
use crate::control::{control_steady_state, infinite_horizon_cost, ControlSynthesis, CostBreakdown};
use crate::error::Result;
use crate::estimation::{kf_steady_state, SteadyStateFilter};
use crate::model::{SchedulerParams, SystemModel};

/// Gains that do not depend on the scheduler, computed once per model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gains {
    pub filter: SteadyStateFilter,
    pub control: ControlSynthesis,
}

impl Gains {
    pub fn new(model: &SystemModel) -> Result<Self> {
        Ok(Self { filter: kf_steady_state(model)?, control: control_steady_state(model)? })
    }
}

/// Everything the analysis produces for one `(λ, T)` pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticResult {
    pub lambda: f64,
    pub timeout: usize,
    pub markov: MarkovAnalysis,
    #[serde(skip)]
    pub conditional: ConditionalErrorCov,
    pub sigma_e_traces: Vec<f64>,
    pub cost: CostBreakdown,
}

impl AnalyticResult {
    pub fn rate(&self) -> f64 {
        self.markov.rate
    }

    pub fn total_cost(&self) -> f64 {
        self.cost.total
    }
}

pub fn analyze_with(model: &SystemModel, gains: &Gains, params: &SchedulerParams) -> Result<AnalyticResult> {
    let markov = MarkovAnalysis::from_chain(transition_chain(&gains.filter, &model.a, params)?)?;
    let conditional = conditional_error_cov(&gains.filter, &model.a, params)?;
    let cost = infinite_horizon_cost(&gains.control, &gains.filter, &markov, &conditional, &model.w)?;
    Ok(AnalyticResult {
        lambda: params.lambda(),
        timeout: params.timeout(),
        sigma_e_traces: conditional.traces(),
        markov,
        conditional,
        cost,
    })
}

pub fn analyze(model: &SystemModel, params: &SchedulerParams) -> Result<AnalyticResult> {
    analyze_with(model, &Gains::new(model)?, params)
}

/// `(λ, σ̄, J_∞)` for each λ, sharing one filter and control synthesis.
pub fn cost_tradeoff_curve(model: &SystemModel, timeout: usize, lambdas: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    let gains = Gains::new(model)?;
    lambdas
        .iter()
        .map(|&l| {
            let r = analyze_with(model, &gains, &SchedulerParams::new(l, timeout)?)?;
            Ok((l, r.rate(), r.total_cost()))
        })
        .collect()
}
