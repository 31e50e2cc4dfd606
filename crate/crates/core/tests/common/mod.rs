#![allow(dead_code)]

use etlqg::linalg::symmetrize;
use etlqg::{validate_model, SystemModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha12Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn spd(rng: &mut ChaCha12Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let g = gaussian(rng, n, n);
    symmetrize(&(&g * g.transpose() / n as f64 + DMatrix::identity(n, n) * floor))
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// A random model that passes validation, with `ρ(A)` drawn from `[0.5, 1.5]`.
pub fn random_model(seed: u64, max_dim: usize) -> SystemModel {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    loop {
        let n = rng.random_range(1..=max_dim);
        let m = rng.random_range(1..=n);
        let p = rng.random_range(1..=n);
        let raw = gaussian(&mut rng, n, n);
        let rho = spectral_radius(&raw);
        if rho < 1e-3 {
            continue;
        }
        let a = raw * (rng.random_range(0.5..1.5) / rho);
        let w = spd(&mut rng, n, 0.1);
        let q = spd(&mut rng, n, 0.1);
        let model = SystemModel::new(
            a,
            gaussian(&mut rng, n, m),
            gaussian(&mut rng, p, n),
            w.clone(),
            spd(&mut rng, p, 0.2),
            q.clone(),
            q,
            spd(&mut rng, m, 0.2),
            DVector::zeros(n),
            w,
        )
        .expect("well-formed by construction");
        if validate_model(&model).expect("structure ok").is_accepted() {
            return model;
        }
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

/// Streaming second-moment accumulator.
#[derive(Debug, Clone)]
pub struct CovAccumulator {
    pub count: usize,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
}

impl CovAccumulator {
    pub fn new(n: usize) -> Self {
        Self { count: 0, sum: DVector::zeros(n), outer: DMatrix::zeros(n, n) }
    }

    pub fn push(&mut self, v: &DVector<f64>) {
        self.count += 1;
        self.sum += v;
        self.outer += v * v.transpose();
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.sum / self.count as f64
    }

    pub fn cov(&self) -> DMatrix<f64> {
        let mu = self.mean();
        &self.outer / self.count as f64 - &mu * mu.transpose()
    }

    /// Second moment about zero, for variables known to have zero mean.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.outer / self.count as f64
    }
}

/// Largest entrywise relative error.
pub fn max_rel_entry_err(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    got.iter().zip(want.iter()).map(|(g, w)| rel_err(*g, *w)).fold(0.0, f64::max)
}
