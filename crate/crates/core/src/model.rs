//! Plant, noise, and cost description plus the scheduler parameters.
//!
//! The plant is the discrete-time LTI system
//!
//! ```text
//! x_{k+1} = A x_k + B u_k + w_k,   w_k ~ N(0, W)
//! y_k     = C x_k + v_k,           v_k ~ N(0, V)
//! x_0 ~ N(x̄₀, X₀)
//! ```
//!
//! with stage cost `xᵀQx + uᵀRu` and terminal weight `Q_f`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Largest state, input, or output dimension accepted.
pub const MAX_DIM: usize = 64;
/// Symmetry tolerance for covariance and weight matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Lower eigenvalue bound for positive semidefinite matrices.
pub const PSD_TOL: f64 = -1e-10;
/// Minimum eigenvalue required of positive definite matrices.
pub const PD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x0_mean: DVector<f64>,
    pub x0_cov: DMatrix<f64>,
}

impl SystemModel {
    /// Builds a model after checking shapes, finiteness, and symmetry.
    ///
    /// Symmetric matrices within [`SYMMETRY_TOL`] are re-symmetrized exactly;
    /// definiteness and the rank conditions are left to [`validate_model`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        w: DMatrix<f64>,
        v: DMatrix<f64>,
        q: DMatrix<f64>,
        qf: DMatrix<f64>,
        r: DMatrix<f64>,
        x0_mean: DVector<f64>,
        x0_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let model = Self { a, b, c, w, v, q, qf, r, x0_mean, x0_cov };
        model.check_structure()?;
        Ok(model.symmetrized())
    }

    /// Two-state plant with one unstable mode (eigenvalues 1.2 and 0.9),
    /// scalar input and output. `Q_f = Q` and `x̄₀ = 0`.
    pub fn unstable_benchmark() -> Self {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 2.0]);
        Self::new(
            DMatrix::from_row_slice(2, 2, &[1.2, 1.0, 0.0, 0.9]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            w.clone(),
            DMatrix::from_element(1, 1, 1.0),
            q.clone(),
            q,
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(2),
            w,
        )
        .expect("benchmark model is well formed")
    }

    /// Scalar plant `a = b = c = 1` with unit noises and weights. Its filter
    /// and control Riccati equations both reduce to `s² = s + 1`.
    pub fn scalar_golden() -> Self {
        let one = || DMatrix::from_element(1, 1, 1.0);
        Self::new(one(), one(), one(), one(), one(), one(), one(), one(), DVector::zeros(1), one())
            .expect("scalar model is well formed")
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    fn symmetrized(mut self) -> Self {
        for m in [&mut self.w, &mut self.v, &mut self.q, &mut self.qf, &mut self.r, &mut self.x0_cov] {
            *m = linalg::symmetrize(m);
        }
        self
    }

    fn check_structure(&self) -> Result<()> {
        let n = self.a.nrows();
        let dim_err = |first, second, detail: String| Error::Dimension { first, second, detail };
        if n == 0 || self.a.ncols() != n {
            return Err(dim_err("A", "A", format!("A must be square, got {}x{}", n, self.a.ncols())));
        }
        if self.b.nrows() != n {
            return Err(dim_err("A", "B", format!("B has {} rows, expected {n}", self.b.nrows())));
        }
        if self.c.ncols() != n {
            return Err(dim_err("A", "C", format!("C has {} columns, expected {n}", self.c.ncols())));
        }
        let (m, p) = (self.b.ncols(), self.c.nrows());
        if m == 0 || p == 0 {
            return Err(dim_err("B", "C", "input and output dimensions must be positive".into()));
        }
        for (name, mat, size) in [
            ("W", &self.w, n),
            ("Q", &self.q, n),
            ("Qf", &self.qf, n),
            ("X0", &self.x0_cov, n),
        ] {
            if mat.nrows() != size || mat.ncols() != size {
                return Err(dim_err("A", name, format!("{name} is {}x{}, expected {n}x{n}", mat.nrows(), mat.ncols())));
            }
        }
        if self.v.nrows() != p || self.v.ncols() != p {
            return Err(dim_err("C", "V", format!("V is {}x{}, expected {p}x{p}", self.v.nrows(), self.v.ncols())));
        }
        if self.r.nrows() != m || self.r.ncols() != m {
            return Err(dim_err("B", "R", format!("R is {}x{}, expected {m}x{m}", self.r.nrows(), self.r.ncols())));
        }
        if self.x0_mean.len() != n {
            return Err(dim_err("A", "x0_mean", format!("x0_mean has length {}, expected {n}", self.x0_mean.len())));
        }
        if n > MAX_DIM || m > MAX_DIM || p > MAX_DIM {
            return Err(Error::InvalidInput(format!(
                "dimensions (n={n}, m={m}, p={p}) exceed the limit of {MAX_DIM}"
            )));
        }
        let all = [
            &self.a, &self.b, &self.c, &self.w, &self.v, &self.q, &self.qf, &self.r, &self.x0_cov,
        ];
        if all.iter().any(|mat| mat.iter().any(|x| !x.is_finite()))
            || self.x0_mean.iter().any(|x| !x.is_finite())
        {
            return Err(Error::InvalidInput("model entries must be finite".into()));
        }
        for (name, mat) in self.symmetric_blocks() {
            let asym = linalg::asymmetry(mat);
            if asym > SYMMETRY_TOL {
                return Err(Error::Definiteness {
                    name,
                    detail: format!("‖M − Mᵀ‖∞ = {asym:e} exceeds {SYMMETRY_TOL:e}"),
                });
            }
        }
        Ok(())
    }

    fn symmetric_blocks(&self) -> [(&'static str, &DMatrix<f64>); 6] {
        [
            ("W", &self.w),
            ("V", &self.v),
            ("Q", &self.q),
            ("Qf", &self.qf),
            ("R", &self.r),
            ("X0", &self.x0_cov),
        ]
    }
}

/// Triggering parameter λ and time-out interval T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerParams {
    lambda: f64,
    timeout: usize,
}

impl SchedulerParams {
    pub fn new(lambda: f64, timeout: usize) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("lambda must be finite and > 0, got {lambda}")));
        }
        if timeout == 0 {
            return Err(Error::InvalidInput("timeout must be at least 1".into()));
        }
        Ok(Self { lambda, timeout })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn timeout(&self) -> usize {
        self.timeout
    }
}

/// Outcome of one validation check together with the quantity it measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured value (eigenvalue, rank, ...); `None` when not applicable.
    pub measured: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn is_accepted(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Rank of the controllability matrix `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension { first: "A", second: "A", detail: "A must be square".into() });
    }
    if b.nrows() != n {
        return Err(Error::Dimension {
            first: "A",
            second: "B",
            detail: format!("B has {} rows, expected {n}", b.nrows()),
        });
    }
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for j in 0..n {
        ctrb.view_mut((0, j * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    Ok(linalg::numerical_rank(&ctrb))
}

/// Rank of the observability matrix of `(A, C)`, via duality.
pub fn observability_rank(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<usize> {
    controllability_rank(&a.transpose(), &c.transpose())
}

/// Runs every definiteness and rank check and reports them all.
///
/// Structural problems (shapes, non-finite entries, asymmetry) are errors;
/// everything else is reported as a failing [`Check`].
pub fn validate_model(model: &SystemModel) -> Result<ValidationReport> {
    model.check_structure()?;
    let n = model.state_dim();
    let mut checks = Vec::new();

    for (name, mat) in [("W", &model.w), ("Q", &model.q), ("Qf", &model.qf), ("X0", &model.x0_cov)] {
        let lo = linalg::min_eigenvalue(mat);
        checks.push(Check {
            name: format!("{name} positive semidefinite"),
            passed: lo >= PSD_TOL,
            measured: Some(lo),
            detail: format!("min eigenvalue {lo:.6e} (required ≥ {PSD_TOL:e})"),
        });
    }
    for (name, mat) in [("V", &model.v), ("R", &model.r)] {
        let lo = linalg::min_eigenvalue(mat);
        checks.push(Check {
            name: format!("{name} positive definite"),
            passed: lo > PD_TOL,
            measured: Some(lo),
            detail: format!("min eigenvalue {lo:.6e} (required > {PD_TOL:e})"),
        });
    }

    let rank_check = |name: &str, rank: usize| Check {
        name: name.to_string(),
        passed: rank == n,
        measured: Some(rank as f64),
        detail: format!("rank {rank} of {n}"),
    };
    checks.push(rank_check("(A,B) controllable", controllability_rank(&model.a, &model.b)?));
    checks.push(rank_check("(A,C) observable", observability_rank(&model.a, &model.c)?));
    checks.push(rank_check(
        "(A,W^1/2) controllable",
        controllability_rank(&model.a, &linalg::psd_sqrt(&model.w))?,
    ));
    checks.push(rank_check(
        "(A,Q^1/2) observable",
        observability_rank(&model.a, &linalg::psd_sqrt(&model.q))?,
    ));
    if model.output_dim() == n {
        checks.push(rank_check(
            "(A,V^1/2) controllable",
            controllability_rank(&model.a, &linalg::psd_sqrt(&model.v))?,
        ));
    } else {
        checks.push(Check {
            name: "(A,V^1/2) controllable".into(),
            passed: true,
            measured: None,
            detail: format!("not applicable: V is {p}x{p} while A is {n}x{n}", p = model.output_dim()),
        });
    }

    Ok(ValidationReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_model_passes_every_check() {
        let report = validate_model(&SystemModel::unstable_benchmark()).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{} failed: {}", c.name, c.detail);
        }
        assert!(report.is_accepted());
    }

    #[test]
    fn identity_dynamics_with_single_actuated_state_is_uncontrollable() {
        let mut m = SystemModel::unstable_benchmark();
        m.a = DMatrix::identity(2, 2);
        m.b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let report = validate_model(&m).unwrap();
        let c = report.check("(A,B) controllable").unwrap();
        assert!(!c.passed);
        assert_eq!(c.measured, Some(1.0));
        assert!(!report.is_accepted());
    }

    #[test]
    fn zero_measurement_noise_fails_definiteness() {
        let mut m = SystemModel::scalar_golden();
        m.v = DMatrix::zeros(1, 1);
        let report = validate_model(&m).unwrap();
        assert!(!report.check("V positive definite").unwrap().passed);
        // With p = n the noise-reachability check also sees V = 0.
        assert!(!report.check("(A,V^1/2) controllable").unwrap().passed);
        assert_eq!(report.failures().count(), 2);
    }

    #[test]
    fn controllability_rank_examples() {
        let bench = SystemModel::unstable_benchmark();
        assert_eq!(controllability_rank(&bench.a, &bench.b).unwrap(), 2);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(controllability_rank(&DMatrix::zeros(2, 2), &b).unwrap(), 1);
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(controllability_rank(&i2, &i2).unwrap(), 2);
    }

    #[test]
    fn dimension_mismatch_names_the_pair() {
        let bench = SystemModel::unstable_benchmark();
        let err = SystemModel::new(
            bench.a.clone(),
            DMatrix::zeros(3, 1),
            bench.c.clone(),
            bench.w.clone(),
            bench.v.clone(),
            bench.q.clone(),
            bench.qf.clone(),
            bench.r.clone(),
            bench.x0_mean.clone(),
            bench.x0_cov.clone(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { first: "A", second: "B", .. }));
        assert!(controllability_rank(&bench.a, &DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn asymmetric_covariance_is_a_definiteness_error() {
        let mut m = SystemModel::unstable_benchmark();
        m.w[(0, 1)] += 1e-6;
        assert!(matches!(validate_model(&m), Err(Error::Definiteness { name: "W", .. })));
    }

    #[test]
    fn new_symmetrizes_within_tolerance() {
        let mut w = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        w[(0, 1)] += 1e-12;
        let b = SystemModel::unstable_benchmark();
        let m = SystemModel::new(
            b.a, b.b, b.c, w, b.v, b.q, b.qf, b.r, b.x0_mean, b.x0_cov,
        )
        .unwrap();
        assert_eq!(m.w[(0, 1)], m.w[(1, 0)]);
    }

    #[test]
    fn validation_is_deterministic() {
        let m = SystemModel::unstable_benchmark();
        assert_eq!(validate_model(&m).unwrap(), validate_model(&m).unwrap());
    }

    #[test]
    fn oversized_model_is_rejected() {
        let n = MAX_DIM + 1;
        let i = || DMatrix::<f64>::identity(n, n);
        let res = SystemModel::new(
            i(), i(), i(), i(), i(), i(), i(), i(), DVector::zeros(n), i(),
        );
        assert!(matches!(res, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn scheduler_params_bounds() {
        assert!(SchedulerParams::new(0.0, 5).is_err());
        assert!(SchedulerParams::new(-1.0, 5).is_err());
        assert!(SchedulerParams::new(f64::INFINITY, 5).is_err());
        assert!(SchedulerParams::new(1.0, 0).is_err());
        let p = SchedulerParams::new(0.5, 50).unwrap();
        assert_eq!((p.lambda(), p.timeout()), (0.5, 50));
    }
}
