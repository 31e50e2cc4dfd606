//! Closed-form communication analysis.
//!
//! Between transmissions the comparison error accumulates the white sequence
//! `η_k ~ N(0, Π_η)` through the open-loop dynamics. The time since the last
//! transmission, `τ_k`, is then a finite Markov chain on `{0, ..., T}` whose
//! only non-trivial transitions are "reset to 0" and "advance by one". The
//! reset probabilities follow from Gaussian integrals of the trigger
//! likelihood `exp(−λ‖e‖²)`, which reduce to determinant ratios:
//!
//! ```text
//! P(E_i) = |I + 2λ Σ_ε(i−1)|^{-1/2}
//! p_i0   = 1 − P(E_{i+1}) / P(E_i)
//! ```
//!
//! All determinants are handled in log space. Raw determinants overflow for
//! unstable `A` long before `T = 50`.

use nalgebra::{Cholesky, DMatrix};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::SteadyStateFilter;
use crate::linalg::{self, symmetrize};
use crate::model::SchedulerParams;

/// Covariance of the stacked cumulative errors `[ε_k(0); ε_{k+1}(1); ...; ε_{k+i}(i)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeErrorCov {
    n: usize,
    order: usize,
    matrix: DMatrix<f64>,
}

impl CumulativeErrorCov {
    /// Highest stacked index `i`; the matrix is `(i+1)n` square.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn block_dim(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        (self.order + 1) * self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Block `(a, b)`; for `a ≤ b` it equals `Σ_{j≤a} A^j Π_η (A^{j+b−a})ᵀ`.
    pub fn block(&self, a: usize, b: usize) -> DMatrix<f64> {
        self.matrix.view((a * self.n, b * self.n), (self.n, self.n)).into_owned()
    }

    /// Leading `(i+1)` block rows and columns, i.e. `Σ_ε(i)` for `i ≤ order`.
    pub fn truncated(&self, i: usize) -> Self {
        let d = (i + 1) * self.n;
        Self {
            n: self.n,
            order: i,
            matrix: self.matrix.view((0, 0), (d, d)).into_owned(),
        }
    }
}

fn stacked_covariance(pi_eta: &DMatrix<f64>, a: &DMatrix<f64>, order: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let powers = linalg::matrix_powers(a, order);
    let dim = (order + 1) * n;
    let mut out = DMatrix::zeros(dim, dim);
    // Along each block diagonal d = b − a:
    // G(a, a+d) = Π_η (A^d)ᵀ + A G(a−1, a−1+d) Aᵀ.
    for d in 0..=order {
        let mut g = pi_eta * powers[d].transpose();
        for row in 0..=(order - d) {
            if row > 0 {
                g = a * &g * a.transpose() + pi_eta * powers[d].transpose();
            }
            let col = row + d;
            out.view_mut((row * n, col * n), (n, n)).copy_from(&g);
            if d > 0 {
                out.view_mut((col * n, row * n), (n, n)).copy_from(&g.transpose());
            }
        }
    }
    symmetrize(&out)
}

/// Builds `Σ_ε(i)`. Requires `i ≤ T − 1`.
pub fn cumulative_cov(
    ss: &SteadyStateFilter,
    a: &DMatrix<f64>,
    i: usize,
    timeout: usize,
) -> Result<CumulativeErrorCov> {
    if i + 1 > timeout {
        return Err(Error::InvalidInput(format!(
            "cumulative covariance order {i} out of range for timeout {timeout}"
        )));
    }
    check_square(a, ss.state_dim())?;
    Ok(CumulativeErrorCov {
        n: a.nrows(),
        order: i,
        matrix: stacked_covariance(&ss.pi_eta, a, i),
    })
}

fn check_square(a: &DMatrix<f64>, n: usize) -> Result<()> {
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension {
            first: "A",
            second: "Pi_eta",
            detail: format!("A is {}x{}, filter has {n} states", a.nrows(), a.ncols()),
        });
    }
    Ok(())
}

fn shifted_identity(cov: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    DMatrix::identity(d, d) + cov * (2.0 * lambda)
}

/// `P(E_{i+1}) = |I + 2λ Σ_ε(i)|^{-1/2}` for a covariance of order `i`:
/// the probability of `i + 1` consecutive non-triggers after a transmission.
pub fn nontrigger_probability(cov: &CumulativeErrorCov, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be > 0, got {lambda}")));
    }
    let ld = linalg::logdet_spd(&shifted_identity(&cov.matrix, lambda), "I + 2λΣ_ε")?;
    Ok((-0.5 * ld).exp())
}

/// The time-since-transmission chain, described by its reset probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauChain {
    pub lambda: f64,
    pub timeout: usize,
    /// `p_{i0}` for `i = 0..=T`; the last entry is 1.
    pub p_i0: Vec<f64>,
    /// Entries that fell outside `[0, 1]` by rounding and were clamped.
    pub clamped: usize,
}

impl TauChain {
    /// Chain with arbitrary reset probabilities (`p_i0.len() == T`); `p_{T0} = 1`
    /// is appended.
    pub fn from_reset_probabilities(lambda: f64, mut p_i0: Vec<f64>) -> Result<Self> {
        if p_i0.is_empty() {
            return Err(Error::InvalidInput("need at least one reset probability".into()));
        }
        if let Some(p) = p_i0.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!("reset probability {p} outside [0, 1]")));
        }
        let timeout = p_i0.len();
        p_i0.push(1.0);
        Ok(Self { lambda, timeout, p_i0, clamped: 0 })
    }

    /// Row-stochastic transition matrix: column 0 holds the resets, the
    /// superdiagonal the advances.
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let t = self.timeout;
        let mut p = DMatrix::zeros(t + 1, t + 1);
        for i in 0..=t {
            p[(i, 0)] += self.p_i0[i];
            if i < t {
                p[(i, i + 1)] = 1.0 - self.p_i0[i];
            }
        }
        p
    }

    /// `Π_{m<n} (1 − p_{m0})` for `n = 0..=T`.
    pub fn survival(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.timeout + 1);
        let mut acc = 1.0;
        out.push(acc);
        for n in 1..=self.timeout {
            acc *= 1.0 - self.p_i0[n - 1];
            out.push(acc);
        }
        out
    }
}

/// `G` with `Σ_ε(order) = G Gᵀ`: block `(j, l)` is `A^{j−l} K S^{1/2}` for
/// `l ≤ j`, where `S` is the innovation covariance. `G` has `p` columns per
/// step, so its rank is at most `(order+1)·p`.
fn stacked_factor(ss: &SteadyStateFilter, a: &DMatrix<f64>, order: usize) -> Result<DMatrix<f64>> {
    let (n, p) = (ss.k_inf.nrows(), ss.k_inf.ncols());
    let chol = Cholesky::new(symmetrize(&ss.innovation_cov)).ok_or_else(|| Error::Singular {
        context: "innovation covariance",
        detail: "not positive definite".into(),
    })?;
    let f = &ss.k_inf * chol.l();
    let mut g = DMatrix::zeros((order + 1) * n, (order + 1) * p);
    let mut block = f;
    for d in 0..=order {
        for l in 0..=(order - d) {
            let j = l + d;
            g.view_mut((j * n, l * p), (n, p)).copy_from(&block);
        }
        block = a * block;
    }
    Ok(g)
}

/// Reset probabilities from the nested determinants `|I + 2λΣ_ε(i)|`.
///
/// `Σ_ε(i)` is the leading principal block of `Σ_ε(T−1)`, so one
/// factorization yields every determinant. The factorization works on the
/// square-root factor of `Σ_ε(T−1)`; forming `I + 2λΣ_ε` itself loses all
/// precision once `λ‖A^T‖²` is large.
pub fn transition_chain(ss: &SteadyStateFilter, a: &DMatrix<f64>, params: &SchedulerParams) -> Result<TauChain> {
    let (lambda, t) = (params.lambda(), params.timeout());
    check_square(a, ss.state_dim())?;
    let g = stacked_factor(ss, a, t - 1)?;
    let logdets = linalg::nested_logdets_lowrank(&g, a.nrows(), 2.0 * lambda)?;
    let mut p_i0 = Vec::with_capacity(t + 1);
    let mut prev = 0.0;
    let mut clamped = 0;
    for ld in logdets {
        // 1 − exp(−x) without cancellation for small x.
        let p = -(-0.5 * (ld - prev)).exp_m1();
        if !(0.0..=1.0).contains(&p) {
            clamped += 1;
        }
        p_i0.push(p.clamp(0.0, 1.0));
        prev = ld;
    }
    p_i0.push(1.0);
    Ok(TauChain { lambda, timeout: t, p_i0, clamped })
}

/// Reset probabilities through the conditional error covariances instead of
/// the stacked determinants.
///
/// Given `τ_k = i`, the next comparison error is `N(0, AΣ_e(i)Aᵀ + Π_η)`, so
/// `p_i0 = 1 − |I + 2λ(AΣ_e(i)Aᵀ + Π_η)|^{-1/2}`. Only `n×n` determinants are
/// involved, which makes this a well-conditioned cross-check.
pub fn transition_chain_conditional(
    ss: &SteadyStateFilter,
    a: &DMatrix<f64>,
    params: &SchedulerParams,
) -> Result<TauChain> {
    let cec = conditional_error_cov(ss, a, params)?;
    let lambda = params.lambda();
    let mut p_i0 = Vec::with_capacity(params.timeout() + 1);
    for i in 0..params.timeout() {
        let pred = a * &cec.sigmas[i] * a.transpose() + &ss.pi_eta;
        let ld = linalg::logdet_spd(&shifted_identity(&pred, lambda), "I + 2λ(AΣ_eAᵀ + Π_η)")?;
        p_i0.push(-(-0.5 * ld).exp_m1());
    }
    p_i0.push(1.0);
    Ok(TauChain { lambda, timeout: params.timeout(), p_i0, clamped: 0 })
}

/// Stationary distribution from the product formula
/// `π(i) = π(0) Π_{m<i}(1 − p_{m0})`, cross-checked against a direct linear
/// solve of `π P = π`, `Σπ = 1`.
pub fn stationary_distribution(chain: &TauChain) -> Result<Vec<f64>> {
    let survival = chain.survival();
    let total: f64 = survival.iter().sum();
    let pi: Vec<f64> = survival.iter().map(|s| s / total).collect();

    let direct = stationary_by_linear_solve(&chain.transition_matrix())?;
    let gap = pi
        .iter()
        .zip(&direct)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if gap > 1e-8 {
        return Err(Error::Internal(format!(
            "stationary distribution: product formula and linear solve differ by {gap:e}"
        )));
    }
    Ok(pi)
}

/// Solves `(Pᵀ − I) πᵀ = 0` with the last equation replaced by `Σπ = 1`.
pub fn stationary_by_linear_solve(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let s = p.nrows();
    let mut m = p.transpose() - DMatrix::identity(s, s);
    let mut rhs = nalgebra::DVector::zeros(s);
    for j in 0..s {
        m[(s - 1, j)] = 1.0;
    }
    rhs[s - 1] = 1.0;
    let sol = m.lu().solve(&rhs).ok_or_else(|| Error::Singular {
        context: "stationary distribution",
        detail: "balance equations are singular".into(),
    })?;
    Ok(sol.iter().copied().collect())
}

/// Average communication rate `σ̄ = 1 / (1 + Σ_{n=1}^T Π_{m<n}(1 − p_{m0}))`.
pub fn communication_rate(chain: &TauChain) -> f64 {
    let mut acc = 1.0;
    let mut denom = 1.0;
    for n in 1..=chain.timeout {
        acc *= 1.0 - chain.p_i0[n - 1];
        denom += acc;
    }
    1.0 / denom
}

/// Chain, transition matrix, stationary distribution, and rate together.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovAnalysis {
    pub chain: TauChain,
    #[serde(skip)]
    pub p_lambda: DMatrix<f64>,
    pub pi: Vec<f64>,
    pub rate: f64,
}

impl MarkovAnalysis {
    pub fn from_chain(chain: TauChain) -> Result<Self> {
        let pi = stationary_distribution(&chain)?;
        let rate = communication_rate(&chain);
        if (rate - pi[0]).abs() > 1e-10 {
            return Err(Error::Internal(format!(
                "communication rate {rate} differs from π(0) = {}",
                pi[0]
            )));
        }
        Ok(Self { p_lambda: chain.transition_matrix(), chain, pi, rate })
    }

    pub fn timeout(&self) -> usize {
        self.chain.timeout
    }
}

/// `Σ_e(0), ..., Σ_e(T)`: covariance of the controller-side error given `τ_k = i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalErrorCov {
    pub sigmas: Vec<DMatrix<f64>>,
}

impl ConditionalErrorCov {
    pub fn traces(&self) -> Vec<f64> {
        self.sigmas.iter().map(|s| s.trace()).collect()
    }
}

/// Evaluates
/// `Σ_e(i) = (1/2λ) I − (1/4λ²) (A Σ_e(i−1) Aᵀ + Π_η + (1/2λ) I)⁻¹`
/// from `Σ_e(0) = 0`, in the equivalent form `(I + 2λX)⁻¹ X` with
/// `X = A Σ_e(i−1) Aᵀ + Π_η`, which avoids the cancellation at large λ.
pub fn conditional_error_cov(
    ss: &SteadyStateFilter,
    a: &DMatrix<f64>,
    params: &SchedulerParams,
) -> Result<ConditionalErrorCov> {
    let n = ss.state_dim();
    check_square(a, n)?;
    let lambda = params.lambda();
    let mut sigmas = Vec::with_capacity(params.timeout() + 1);
    sigmas.push(DMatrix::zeros(n, n));
    for i in 1..=params.timeout() {
        let x = symmetrize(&(a * &sigmas[i - 1] * a.transpose() + &ss.pi_eta));
        let chol = Cholesky::new(shifted_identity(&x, lambda)).ok_or_else(|| Error::Singular {
            context: "conditional error recursion",
            detail: format!("I + 2λX not positive definite at i = {i}"),
        })?;
        sigmas.push(symmetrize(&chol.solve(&x)));
    }
    Ok(ConditionalErrorCov { sigmas })
}
