//! Seeded closed-loop Monte Carlo simulation.
//!
//! Each run owns four ChaCha streams derived from the master seed: process
//! noise, measurement noise, initial state, and trigger uniforms. Every stream
//! is consumed on a fixed schedule (one draw of each kind per step), so the
//! transmission pattern does not depend on the control law.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{SchedulerParams, SystemModel};
use crate::pipeline::{analyze_with, Gains};
use crate::scheduling::{advance_tau, trigger_decision, SchedulerState};

pub const DEFAULT_BURN_IN: usize = 200;
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: SystemModel,
    pub params: SchedulerParams,
    /// Steps per run, burn-in included.
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub record_trace: bool,
}

impl SimConfig {
    pub fn new(model: SystemModel, params: SchedulerParams, horizon: usize, runs: usize, seed: u64) -> Result<Self> {
        let cfg = Self { model, params, horizon, runs, seed, burn_in: DEFAULT_BURN_IN, record_trace: false };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Result<Self> {
        self.burn_in = burn_in;
        self.check()?;
        Ok(self)
    }

    pub fn with_trace(mut self, record: bool) -> Self {
        self.record_trace = record;
        self
    }

    /// Rejects empty runs and a burn-in that leaves nothing to average.
    pub fn check(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::InvalidInput("runs must be at least 1".into()));
        }
        if self.burn_in >= self.horizon {
            return Err(Error::InvalidInput(format!(
                "burn-in {} leaves no steps of a {}-step run",
                self.burn_in, self.horizon
            )));
        }
        Ok(())
    }

    /// Steps that enter the empirical averages.
    pub fn averaged_steps(&self) -> usize {
        self.horizon - self.burn_in
    }
}

/// Draws from `N(mean, cov)` through a cached symmetric square-root factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() != mean.len() {
            return Err(Error::Dimension {
                first: "mean",
                second: "covariance",
                detail: format!("{} vs {}x{}", mean.len(), cov.nrows(), cov.ncols()),
            });
        }
        let scale = linalg::max_eigenvalue(cov).abs().max(1.0);
        let min = linalg::min_eigenvalue(cov);
        if !(min >= -1e-10 * scale) {
            return Err(Error::Definiteness {
                name: "sampling covariance",
                detail: format!("minimum eigenvalue {min:e}"),
            });
        }
        Ok(Self { mean, factor: linalg::psd_sqrt(cov) })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }
}

/// Control applied by the simulated controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ControlLaw {
    /// `u = −L_∞ x̂ᶜ_{k|k}`.
    #[default]
    CertaintyEquivalent,
    /// `u ≡ 0`.
    Zero,
}

/// One step as seen by an observer. `e` is `x̂ˢ_{k|k} − x̂ᶜ_{k|k}`.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub k: usize,
    pub x: &'a DVector<f64>,
    pub y: &'a DVector<f64>,
    pub x_sensor: &'a DVector<f64>,
    pub x_controller: &'a DVector<f64>,
    pub u: &'a DVector<f64>,
    pub sigma: bool,
    pub tau: usize,
    pub e: &'a DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub x_sensor: DVector<f64>,
    pub x_controller: DVector<f64>,
    pub u: DVector<f64>,
    pub sigma: bool,
    pub tau: usize,
    pub e: DVector<f64>,
}

impl From<&StepView<'_>> for StepRecord {
    fn from(s: &StepView<'_>) -> Self {
        Self {
            k: s.k,
            x: s.x.clone(),
            y: s.y.clone(),
            x_sensor: s.x_sensor.clone(),
            x_controller: s.x_controller.clone(),
            u: s.u.clone(),
            sigma: s.sigma,
            tau: s.tau,
            e: s.e.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationTrace {
    pub steps: Vec<StepRecord>,
}

impl SimulationTrace {
    pub fn sigmas(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.sigma).collect()
    }

    /// Longest run of steps from one transmission to the next, counting both ends' distance.
    pub fn max_transmission_gap(&self) -> Option<usize> {
        let idx: Vec<usize> = self.steps.iter().filter(|s| s.sigma).map(|s| s.k).collect();
        idx.windows(2).map(|w| w[1] - w[0]).max()
    }

    /// CSV with header `k,sigma,tau,x1..xn,u1..um,e1..en`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let Some(first) = self.steps.first() else {
            return writeln!(out, "k,sigma,tau");
        };
        let mut header = vec!["k".to_string(), "sigma".into(), "tau".into()];
        header.extend((1..=first.x.len()).map(|i| format!("x{i}")));
        header.extend((1..=first.u.len()).map(|i| format!("u{i}")));
        header.extend((1..=first.e.len()).map(|i| format!("e{i}")));
        writeln!(out, "{}", header.join(","))?;
        for s in &self.steps {
            write!(out, "{},{},{}", s.k, u8::from(s.sigma), s.tau)?;
            for v in s.x.iter().chain(s.u.iter()).chain(s.e.iter()) {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Per-run averages over the post-burn-in window.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub rate: f64,
    pub cost: f64,
    pub trace: Option<SimulationTrace>,
}

const STREAM_PROCESS: u64 = 0;
const STREAM_MEASUREMENT: u64 = 1;
const STREAM_INITIAL: u64 = 2;
const STREAM_TRIGGER: u64 = 3;

fn stream(seed: u64, run: u64, kind: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(run.wrapping_mul(4).wrapping_add(kind));
    rng
}

/// Closed loop with samplers and gains prepared once, shareable across runs.
#[derive(Debug, Clone)]
pub struct ClosedLoop<'a> {
    cfg: &'a SimConfig,
    gains: &'a Gains,
    process: GaussianSampler,
    measurement: GaussianSampler,
    initial: GaussianSampler,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(cfg: &'a SimConfig, gains: &'a Gains) -> Result<Self> {
        let m = &cfg.model;
        let n = m.state_dim();
        if gains.filter.state_dim() != n || gains.control.l_inf.ncols() != n || gains.control.l_inf.nrows() != m.input_dim() {
            return Err(Error::Dimension {
                first: "gains",
                second: "model",
                detail: "gains were synthesized for a different model".into(),
            });
        }
        Ok(Self {
            cfg,
            gains,
            process: GaussianSampler::new(DVector::zeros(n), &m.w)?,
            measurement: GaussianSampler::new(DVector::zeros(m.output_dim()), &m.v)?,
            initial: GaussianSampler::new(m.x0_mean.clone(), &m.x0_cov)?,
        })
    }

    pub fn run(&self, run: u64, law: ControlLaw) -> Result<RunOutcome> {
        self.run_observed(run, law, |_| {})
    }

    /// Runs one replication, handing every step (burn-in included) to `observer`.
    pub fn run_observed<F: FnMut(&StepView<'_>)>(&self, run: u64, law: ControlLaw, mut observer: F) -> Result<RunOutcome> {
        let cfg = self.cfg;
        let m = &cfg.model;
        let k_gain = &self.gains.filter.k_inf;
        let l_gain = &self.gains.control.l_inf;
        let (lambda, timeout) = (cfg.params.lambda(), cfg.params.timeout());

        let mut rng_w = stream(cfg.seed, run, STREAM_PROCESS);
        let mut rng_v = stream(cfg.seed, run, STREAM_MEASUREMENT);
        let mut rng_x0 = stream(cfg.seed, run, STREAM_INITIAL);
        let mut rng_trig = stream(cfg.seed, run, STREAM_TRIGGER);

        // The loop carries the sensor's filtering error x̃ and the comparison
        // error e rather than the two estimates. Both are driven by noise
        // alone, so the trigger sees bitwise the same inputs under any control
        // law; the estimates are recovered as x̂ˢ = x − x̃ and x̂ᶜ = x̂ˢ − e.
        let mut x = self.initial.sample(&mut rng_x0);
        let mut xt_pred = &x - &m.x0_mean;
        let mut e_carry = DVector::zeros(m.state_dim());
        let mut sched = SchedulerState::initial();
        let zero_u = DVector::zeros(m.input_dim());

        let mut trace = cfg.record_trace.then(|| SimulationTrace { steps: Vec::with_capacity(cfg.horizon) });
        let (mut sent, mut cost) = (0usize, 0.0);

        for k in 0..cfg.horizon {
            let v = self.measurement.sample(&mut rng_v);
            let y = &m.c * &x + &v;
            let correction = k_gain * (&m.c * &xt_pred + &v);
            let xt = &xt_pred - &correction;
            let e_pred = &e_carry + &correction;
            let draw: f64 = rng_trig.random();
            let delta = trigger_decision(&e_pred, lambda, draw)?;
            sched = advance_tau(sched, delta, timeout);
            let sigma = sched.last_sigma;
            let e = if sigma { DVector::zeros(e_pred.len()) } else { e_pred };
            let xs = &x - &xt;
            let xc = &xs - &e;
            let u = match law {
                ControlLaw::CertaintyEquivalent => -(l_gain * &xc),
                ControlLaw::Zero => zero_u.clone(),
            };

            if k >= cfg.burn_in {
                sent += usize::from(sigma);
                cost += x.dot(&(&m.q * &x)) + u.dot(&(&m.r * &u));
            }
            let view = StepView { k, x: &x, y: &y, x_sensor: &xs, x_controller: &xc, u: &u, sigma, tau: sched.tau, e: &e };
            observer(&view);
            if let Some(t) = trace.as_mut() {
                t.steps.push(StepRecord::from(&view));
            }

            let w = self.process.sample(&mut rng_w);
            x = &m.a * &x + &m.b * &u + &w;
            let norm = x.amax();
            if !(norm <= DIVERGENCE_LIMIT) {
                return Err(Error::Divergence { step: k + 1, norm });
            }
            xt_pred = &m.a * &xt + &w;
            e_carry = &m.a * &e;
        }
        let steps = cfg.averaged_steps() as f64;
        Ok(RunOutcome { rate: sent as f64 / steps, cost: cost / steps, trace })
    }
}

pub fn run_closed_loop(cfg: &SimConfig, gains: &Gains, run: u64, law: ControlLaw) -> Result<RunOutcome> {
    ClosedLoop::new(cfg, gains)?.run(run, law)
}

/// Sample mean with its standard error across runs; no error for a single run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: Option<f64>,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = (xs.len() >= 2).then(|| {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        });
        Self { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub lambda: f64,
    pub timeout: usize,
    pub empirical_rate: Estimate,
    pub empirical_cost: Estimate,
    pub analytic_rate: f64,
    pub analytic_cost: f64,
    pub runs: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
}

pub fn run_experiment(cfg: &SimConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, &Gains::new(&cfg.model)?)
}

/// Runs are simulated in parallel and reduced in run order.
pub fn run_experiment_with(cfg: &SimConfig, gains: &Gains) -> Result<ExperimentResult> {
    let analytic = analyze_with(&cfg.model, gains, &cfg.params)?;
    let lp = ClosedLoop::new(cfg, gains)?;
    let outcomes: Vec<Result<RunOutcome>> = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|r| lp.run(r, ControlLaw::CertaintyEquivalent))
        .collect();
    let mut rates = Vec::with_capacity(cfg.runs);
    let mut costs = Vec::with_capacity(cfg.runs);
    for o in outcomes {
        let o = o?;
        rates.push(o.rate);
        costs.push(o.cost);
    }
    Ok(ExperimentResult {
        lambda: cfg.params.lambda(),
        timeout: cfg.params.timeout(),
        empirical_rate: Estimate::from_samples(&rates),
        empirical_cost: Estimate::from_samples(&costs),
        analytic_rate: analytic.rate(),
        analytic_cost: analytic.total_cost(),
        runs: cfg.runs,
        horizon: cfg.horizon,
        burn_in: cfg.burn_in,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bench_cfg(lambda: f64, t: usize, horizon: usize, runs: usize, seed: u64) -> SimConfig {
        SimConfig::new(SystemModel::unstable_benchmark(), SchedulerParams::new(lambda, t).unwrap(), horizon, runs, seed).unwrap()
    }

    #[test]
    fn config_rejects_degenerate_sizes() {
        let m = SystemModel::scalar_golden();
        let p = SchedulerParams::new(1.0, 5).unwrap();
        assert!(SimConfig::new(m.clone(), p, 0, 1, 0).is_err());
        assert!(SimConfig::new(m.clone(), p, 10, 0, 0).is_err());
        assert!(SimConfig::new(m, p, 100, 1, 0).is_err());
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let s = GaussianSampler::new(DVector::from_column_slice(&[1.5, -2.0]), &DMatrix::zeros(2, 2)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        assert_eq!(s.sample(&mut rng), DVector::from_column_slice(&[1.5, -2.0]));
    }

    #[test]
    fn indefinite_covariance_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(GaussianSampler::new(DVector::zeros(2), &cov), Err(Error::Definiteness { .. })));
    }

    #[test]
    fn sensor_and_controller_agree_on_transmission() {
        let cfg = bench_cfg(1.0, 50, 500, 1, 11).with_burn_in(0).unwrap().with_trace(true);
        let gains = Gains::new(&cfg.model).unwrap();
        let out = run_closed_loop(&cfg, &gains, 0, ControlLaw::CertaintyEquivalent).unwrap();
        let trace = out.trace.unwrap();
        assert_eq!(trace.steps.len(), 500);
        for s in &trace.steps {
            if s.sigma {
                assert_eq!(s.x_sensor, s.x_controller);
                assert_eq!(s.tau, 0);
            } else {
                assert!((&s.x_sensor - &s.x_controller - &s.e).amax() <= 1e-12 * s.x_sensor.amax().max(1.0));
            }
        }
    }

    #[test]
    fn timeout_bounds_gaps() {
        let cfg = bench_cfg(1e-6, 3, 4000, 1, 5).with_trace(true);
        let gains = Gains::new(&cfg.model).unwrap();
        let out = run_closed_loop(&cfg, &gains, 0, ControlLaw::CertaintyEquivalent).unwrap();
        assert!(out.trace.unwrap().max_transmission_gap().unwrap() <= 4);
    }

    #[test]
    fn timeout_only_gives_periodic_rate() {
        let cfg = bench_cfg(1e-6, 3, 4200, 4, 9);
        let r = run_experiment(&cfg).unwrap();
        assert!((r.empirical_rate.mean - 0.25).abs() < 0.01, "{:?}", r.empirical_rate);
    }

    #[test]
    fn very_large_lambda_sends_almost_always() {
        let r = run_experiment(&bench_cfg(1e6, 50, 1200, 4, 1)).unwrap();
        assert!(r.empirical_rate.mean >= 0.99);
    }

    #[test]
    fn single_run_has_no_standard_error() {
        let r = run_experiment(&bench_cfg(1.0, 50, 400, 1, 1)).unwrap();
        assert!(r.empirical_rate.stderr.is_none());
        assert!(r.empirical_cost.stderr.is_none());
    }

    #[test]
    fn same_seed_same_result() {
        let cfg = bench_cfg(0.3, 50, 600, 8, 42);
        assert_eq!(run_experiment(&cfg).unwrap(), run_experiment(&cfg).unwrap());
        let other = bench_cfg(0.3, 50, 600, 8, 43);
        assert_ne!(run_experiment(&cfg).unwrap().empirical_cost, run_experiment(&other).unwrap().empirical_cost);
    }

    #[test]
    fn uncontrolled_unstable_plant_diverges() {
        let cfg = bench_cfg(1.0, 50, 400, 1, 2);
        let gains = Gains::new(&cfg.model).unwrap();
        let err = run_closed_loop(&cfg, &gains, 0, ControlLaw::Zero).unwrap_err();
        assert!(matches!(err, Error::Divergence { step, .. } if step > 50));
    }

    #[test]
    fn csv_layout() {
        let cfg = SimConfig { horizon: 3, burn_in: 0, ..bench_cfg(1.0, 50, 300, 1, 7) }.with_trace(true);
        let gains = Gains::new(&cfg.model).unwrap();
        let trace = run_closed_loop(&cfg, &gains, 0, ControlLaw::CertaintyEquivalent).unwrap().trace.unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,sigma,tau,x1,x2,u1,e1,e2");
        assert_eq!(lines.len(), 4);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 8);
        let x1: f64 = fields[3].parse().unwrap();
        assert_eq!(x1, trace.steps[0].x[0]);
    }

    #[test]
    fn estimate_statistics() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr.unwrap() - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
