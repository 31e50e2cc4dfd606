//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Everything here works on `nalgebra` dynamic matrices; the models this crate
//! targets are at most 64 states, so dense factorizations are the right tool.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition number above which an inversion is reported as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Induced ∞-norm (maximum absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `‖M − Mᵀ‖_∞`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    inf_norm(&(m - m.transpose()))
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Symmetric square root with negative eigenvalues clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    symmetrize(&(q * DMatrix::from_diagonal(&roots) * q.transpose()))
}

/// Numerical rank from singular values, threshold `max(r, c) · σ_max · ε`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = m.nrows().max(m.ncols()) as f64 * smax * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let s = symmetrize(m);
    let ev = sym_eigenvalues(&s);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::Singular {
            context,
            detail: format!("eigenvalue range [{lo:e}, {hi:e}]"),
        });
    }
    let chol = Cholesky::new(s).ok_or_else(|| Error::Singular {
        context,
        detail: "Cholesky factorization failed".into(),
    })?;
    Ok(symmetrize(&chol.inverse()))
}

/// Log-determinants of the leading principal submatrices of an SPD matrix
/// whose sizes are multiples of `block`.
///
/// Entry `k` is `log |M[..(k+1)·block, ..(k+1)·block]|`. A single Cholesky
/// factorization serves every prefix; the matrix is equilibrated by its
/// diagonal first so that rows growing like `ρ(A)^j` do not swamp the pivots.
pub fn nested_logdets(m: &DMatrix<f64>, block: usize, context: &'static str) -> Result<Vec<f64>> {
    let dim = m.nrows();
    if block == 0 || !dim.is_multiple_of(block) || m.ncols() != dim {
        return Err(Error::InvalidInput(format!(
            "{context}: {dim}x{} matrix is not a stack of {block}-blocks",
            m.ncols()
        )));
    }
    let diag: Vec<f64> = (0..dim).map(|i| m[(i, i)]).collect();
    if let Some(bad) = diag.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        return Err(Error::Singular {
            context,
            detail: format!("non-positive diagonal entry {bad:e}"),
        });
    }
    let scale: Vec<f64> = diag.iter().map(|d| d.sqrt().recip()).collect();
    let scaled = DMatrix::from_fn(dim, dim, |i, j| {
        0.5 * (m[(i, j)] + m[(j, i)]) * scale[i] * scale[j]
    });
    let chol = Cholesky::new(scaled).ok_or_else(|| Error::Singular {
        context,
        detail: "matrix is not positive definite".into(),
    })?;
    let l = chol.l_dirty();

    let mut out = Vec::with_capacity(dim / block);
    let mut acc = 0.0;
    for i in 0..dim {
        acc += 2.0 * l[(i, i)].ln() + diag[i].ln();
        if (i + 1) % block == 0 {
            out.push(acc);
        }
    }
    Ok(out)
}

/// Nested log-determinants of `I + c·G Gᵀ` without forming `G Gᵀ`.
///
/// Entry `k` is `log |I + c·G_k G_kᵀ|` where `G_k` holds the first
/// `(k+1)·block` rows of `G`. With `[I; √c·Gᵀ] = Q R`, `RᵀR = I + c·G Gᵀ` and
/// `R` is upper triangular, so every leading block is a prefix of `diag(R)`.
pub fn nested_logdets_lowrank(g: &DMatrix<f64>, block: usize, c: f64) -> Result<Vec<f64>> {
    let rows = g.nrows();
    if block == 0 || !rows.is_multiple_of(block) {
        return Err(Error::InvalidInput(format!("{rows} rows are not a stack of {block}-blocks")));
    }
    if !(c >= 0.0) || !c.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("factor or scale is not finite and non-negative".into()));
    }
    let mut z = DMatrix::zeros(rows + g.ncols(), rows);
    z.view_mut((0, 0), (rows, rows)).fill_with_identity();
    z.view_mut((rows, 0), (g.ncols(), rows)).copy_from(&(g.transpose() * c.sqrt()));
    let r = z.qr().r();
    let mut out = Vec::with_capacity(rows / block);
    let mut acc = 0.0;
    for i in 0..rows {
        acc += 2.0 * r[(i, i)].abs().ln();
        if (i + 1) % block == 0 {
            out.push(acc);
        }
    }
    Ok(out)
}

/// Iterations without a new best residual after which a fixed-point solve is
/// considered stalled at its rounding floor.
pub const STALL_WINDOW: usize = 10_000;

/// Fixed point of `step` from `init`, stopping at `‖ΔX‖_∞ < tol`.
///
/// If the residual stops improving for [`STALL_WINDOW`] iterations while the
/// best residual is within `tol·‖X‖_∞`, the best iterate is accepted: for
/// large `‖X‖` an absolute `tol` lies below the rounding floor of the map.
/// Returns the fixed point, the iteration count, and the final residual.
pub fn riccati_fixed_point<F>(
    init: DMatrix<f64>,
    tol: f64,
    max_iter: usize,
    solver: &'static str,
    mut step: F,
) -> Result<(DMatrix<f64>, usize, f64)>
where
    F: FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let mut x = init;
    let mut best = (f64::INFINITY, 0usize, x.clone());
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let next = step(&x)?;
        residual = inf_norm(&(&next - &x));
        x = next;
        iterations += 1;
        if !residual.is_finite() {
            break;
        }
        if residual < tol {
            return Ok((x, iterations, residual));
        }
        if residual < best.0 {
            best = (residual, iterations, x.clone());
        } else if iterations - best.1 >= STALL_WINDOW {
            if best.0 <= tol * inf_norm(&best.2).max(1.0) {
                return Ok((best.2, iterations, best.0));
            }
            break;
        }
    }
    Err(Error::Convergence { solver, iterations, residual })
}

/// `log |M|` for a symmetric positive definite matrix.
pub fn logdet_spd(m: &DMatrix<f64>, context: &'static str) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let all = nested_logdets(m, m.nrows(), context)?;
    Ok(all[0])
}

/// Lists `A^0, A^1, ..., A^max_power`.
pub fn matrix_powers(a: &DMatrix<f64>, max_power: usize) -> Vec<DMatrix<f64>> {
    let mut powers = Vec::with_capacity(max_power + 1);
    powers.push(DMatrix::identity(a.nrows(), a.ncols()));
    for j in 1..=max_power {
        let next = a * &powers[j - 1];
        powers.push(next);
    }
    powers
}
