//! Conjugate gradients, MINRES and Lanczos extreme-eigenvalue estimation for
//! symmetric operators.
//!
//! All reductions run sequentially in index order so that iteration counts
//! are reproducible.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// A square linear map applied to vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.mul_dvec(x))
    }
}

/// Dense symmetric matrix; products are column dots, which parallelize over
/// a column-major layout without changing the summation order.
#[derive(Debug, Clone)]
pub struct SymmetricDense<'a>(pub &'a DMatrix<f64>);

impl LinearOperator for SymmetricDense<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(symmetric_matvec(self.0, x))
    }
}

pub fn symmetric_matvec(a: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    assert_eq!(x.len(), n);
    let xs = x.as_slice();
    let data = a.as_slice();
    let out: Vec<f64> = (0..a.ncols())
        .into_par_iter()
        .map(|j| dot(&data[j * n..(j + 1) * n], xs))
        .collect();
    DVector::from_vec(out)
}

/// Wraps a closure as an operator.
pub struct FnOperator<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> LinearOperator for FnOperator<F>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (self.f)(x)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &DVector<f64>) -> f64 {
    dot(v.as_slice(), v.as_slice()).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual after iteration `k` at index `k` (index 0 is the start).
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// Extreme Ritz values of the Krylov space, when available.
    pub ritz: Option<(f64, f64)>,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().unwrap()
    }
}

/// Conjugate gradients from a zero initial guess.
///
/// Returns `Error::Breakdown` when `pᵀAp ≤ 0`, which means the operator is
/// not positive (semi-)definite on the Krylov space.
pub fn conjugate_gradient(
    op: &dyn LinearOperator,
    b: &DVector<f64>,
    tol: f64,
    maxit: usize,
) -> Result<(DVector<f64>, SolveReport)> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    let bnorm = norm(b);
    let mut x = DVector::zeros(n);
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residuals: vec![0.0],
                converged: true,
                ritz: None,
            },
        ));
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot(r.as_slice(), r.as_slice());
    let mut residuals = vec![1.0];
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < maxit {
        let ap = op.apply(&p)?;
        let curvature = dot(p.as_slice(), ap.as_slice());
        if !(curvature > 0.0) {
            return Err(Error::Breakdown {
                iteration: iterations,
                curvature,
            });
        }
        let alpha = rr / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = dot(r.as_slice(), r.as_slice());
        iterations += 1;
        let rel = rr_new.sqrt() / bnorm;
        residuals.push(rel);
        alphas.push(alpha);
        if rel <= tol {
            converged = true;
            break;
        }
        let beta = rr_new / rr;
        betas.push(beta);
        rr = rr_new;
        p = &r + &p * beta;
    }
    let ritz = cg_ritz_values(&alphas, &betas);
    Ok((
        x,
        SolveReport {
            iterations,
            residuals,
            converged,
            ritz,
        },
    ))
}

/// Extreme eigenvalues of the Lanczos tridiagonal implied by CG coefficients.
fn cg_ritz_values(alphas: &[f64], betas: &[f64]) -> Option<(f64, f64)> {
    let m = alphas.len();
    if m == 0 || m > 1000 {
        return None;
    }
    let mut t = DMatrix::zeros(m, m);
    for j in 0..m {
        t[(j, j)] = 1.0 / alphas[j] + if j > 0 { betas[j - 1] / alphas[j - 1] } else { 0.0 };
        if j + 1 < m {
            let off = betas[j].sqrt() / alphas[j];
            t[(j, j + 1)] = off;
            t[(j + 1, j)] = off;
        }
    }
    let eig = SymmetricEigen::new(t).eigenvalues;
    Some((eig.min(), eig.max()))
}

/// Minimal-residual method for symmetric, possibly indefinite operators.
pub fn minres(
    op: &dyn LinearOperator,
    b: &DVector<f64>,
    tol: f64,
    maxit: usize,
) -> Result<(DVector<f64>, SolveReport)> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    let beta1 = norm(b);
    let mut x = DVector::zeros(n);
    let mut residuals = vec![1.0];
    if beta1 == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residuals: vec![0.0],
                converged: true,
                ritz: None,
            },
        ));
    }
    let mut r1 = b.clone();
    let mut r2 = b.clone();
    let mut y = b.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut w = DVector::zeros(n);
    let mut w2 = DVector::zeros(n);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < maxit {
        let v = &y / beta;
        y = op.apply(&v)?;
        if iterations >= 1 {
            y.axpy(-beta / oldb, &r1, 1.0);
        }
        let alfa = dot(v.as_slice(), y.as_slice());
        y.axpy(-alfa / beta, &r2, 1.0);
        r1 = std::mem::replace(&mut r2, y.clone());
        oldb = beta;
        beta = norm(&y);

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let w1 = std::mem::replace(&mut w2, w.clone());
        w = (&v - &w1 * oldeps - &w2 * delta) / gamma;
        x.axpy(phi, &w, 1.0);
        iterations += 1;
        let rel = phibar.abs() / beta1;
        residuals.push(rel);
        if rel <= tol {
            converged = true;
            break;
        }
        if beta == 0.0 {
            break;
        }
    }
    Ok((
        x,
        SolveReport {
            iterations,
            residuals,
            converged,
            ritz: None,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionEstimate {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub cond: f64,
    pub iterations: usize,
}

/// Lanczos iteration cap for [`estimate_condition`].
pub const LANCZOS_MAX_ITERATIONS: usize = 300;

/// Extreme nonzero eigenvalues of a symmetric positive semi-definite operator
/// with a kernel of dimension `kernel_dim`, by Lanczos with full
/// reorthogonalization.
///
/// The start vector is mapped through the operator once so the Krylov space
/// stays in its range; up to `kernel_dim` numerically-zero Ritz values are
/// discarded in addition.
pub fn estimate_condition(op: &dyn LinearOperator, kernel_dim: usize) -> Result<ConditionEstimate> {
    estimate_condition_with(op, kernel_dim, LANCZOS_MAX_ITERATIONS, 1e-4)
}

pub fn estimate_condition_with(
    op: &dyn LinearOperator,
    kernel_dim: usize,
    maxit: usize,
    tol: f64,
) -> Result<ConditionEstimate> {
    lanczos_extremes(op, kernel_dim, maxit, tol, true)
}

/// Largest eigenvalue of a symmetric positive semi-definite operator; only
/// the top Ritz value has to converge.
pub fn largest_eigenvalue(op: &dyn LinearOperator, maxit: usize, tol: f64) -> Result<f64> {
    Ok(lanczos_extremes(op, 0, maxit, tol, false)?.lambda_max)
}

fn lanczos_extremes(
    op: &dyn LinearOperator,
    kernel_dim: usize,
    maxit: usize,
    tol: f64,
    track_min: bool,
) -> Result<ConditionEstimate> {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a2c);
    let start = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    let mut q = op.apply(&start)?;
    let qn = norm(&q);
    if qn == 0.0 {
        return Err(Error::NotConverged {
            solver: "lanczos",
            iterations: 0,
            residual: f64::NAN,
        });
    }
    q /= qn;
    let mut basis: Vec<DVector<f64>> = vec![q];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let cap = maxit.min(n);
    let mut last: Option<(ConditionEstimate, f64)> = None;
    loop {
        let j = basis.len() - 1;
        let mut w = op.apply(&basis[j])?;
        let alpha = dot(w.as_slice(), basis[j].as_slice());
        alphas.push(alpha);
        // full reorthogonalization, twice
        for _ in 0..2 {
            for v in &basis {
                let c = dot(w.as_slice(), v.as_slice());
                w.axpy(-c, v, 1.0);
            }
        }
        let beta = norm(&w);
        let m = alphas.len();
        let scale = alphas.iter().map(|a| a.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let invariant = beta <= 1e-12 * scale;
        let done = invariant || m >= cap;
        if done || m % 10 == 0 {
            let (estimate, worst) = tridiagonal_extremes(&alphas, &betas, beta, kernel_dim, track_min)?;
            let estimate = ConditionEstimate {
                iterations: m,
                ..estimate
            };
            if invariant || worst <= tol {
                return Ok(estimate);
            }
            if done {
                let changed = last
                    .map(|(prev, _)| {
                        let top = ((prev.lambda_max - estimate.lambda_max) / estimate.lambda_max).abs();
                        let bottom = ((prev.lambda_min - estimate.lambda_min) / estimate.lambda_min).abs();
                        if track_min {
                            top.max(bottom)
                        } else {
                            top
                        }
                    })
                    .unwrap_or(f64::INFINITY);
                if changed <= tol || m >= n {
                    return Ok(estimate);
                }
                return Err(Error::NotConverged {
                    solver: "lanczos",
                    iterations: m,
                    residual: worst,
                });
            }
            last = Some((estimate, worst));
        }
        betas.push(beta);
        basis.push(w / beta);
    }
}

/// Ritz extremes and the larger of their relative residual bounds.
fn tridiagonal_extremes(
    alphas: &[f64],
    betas: &[f64],
    next_beta: f64,
    kernel_dim: usize,
    track_min: bool,
) -> Result<(ConditionEstimate, f64)> {
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for j in 0..m {
        t[(j, j)] = alphas[j];
        if j + 1 < m {
            t[(j, j + 1)] = betas[j];
            t[(j + 1, j)] = betas[j];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let top = order[m - 1];
    let lambda_max = eig.eigenvalues[top];
    let mut skip = 0;
    while skip < kernel_dim
        && skip + 1 < m
        && eig.eigenvalues[order[skip]].abs() <= 1e-10 * lambda_max.abs()
    {
        skip += 1;
    }
    let bottom = order[skip];
    let lambda_min = eig.eigenvalues[bottom];
    let residual = |k: usize| (next_beta * eig.eigenvectors[(m - 1, k)]).abs() / eig.eigenvalues[k].abs();
    let worst = if track_min {
        residual(top).max(residual(bottom))
    } else {
        residual(top)
    };
    Ok((
        ConditionEstimate {
            lambda_min,
            lambda_max,
            cond: lambda_max / lambda_min,
            iterations: m,
        },
        worst,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(values: &[f64]) -> CsrMatrix {
        CsrMatrix::diagonal_from(values)
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(n, n) * (n as f64 * 0.1)
    }

    fn random_indefinite(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let mut s = &a + a.transpose();
        for i in 0..n {
            s[(i, i)] += if i % 2 == 0 { 3.0 } else { -3.0 };
        }
        s
    }

    #[test]
    fn cg_identity_one_iteration() {
        let op = diag(&[1.0; 5]);
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5, 2.0]);
        let (x, rep) = conjugate_gradient(&op, &b, 1e-12, 10).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!((x - b).norm() < 1e-14);
    }

    #[test]
    fn cg_diagonal_terminates() {
        let op = diag(&[1.0, 2.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let (x, rep) = conjugate_gradient(&op, &b, 1e-12, 10).unwrap();
        assert!(rep.iterations <= 3 && rep.converged);
        assert!((x - DVector::from_vec(vec![1.0, 0.5, 1.0 / 3.0])).norm() < 1e-12);
        let (lo, hi) = rep.ritz.unwrap();
        assert!((lo - 1.0).abs() < 1e-10 && (hi - 3.0).abs() < 1e-10);
    }

    #[test]
    fn cg_matches_dense_solve() {
        let a = random_spd(50, 7);
        let b = DVector::from_fn(50, |i, _| (i as f64 * 0.37).sin());
        let (x, rep) = conjugate_gradient(&SymmetricDense(&a), &b, 1e-13, 500).unwrap();
        assert!(rep.converged);
        let oracle = a.clone().lu().solve(&b).unwrap();
        assert!((&x - &oracle).norm() / oracle.norm() < 1e-8);
    }

    #[test]
    fn cg_reports_breakdown_on_indefinite() {
        let op = diag(&[1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            conjugate_gradient(&op, &b, 1e-12, 10),
            Err(Error::Breakdown { .. })
        ));
    }

    #[test]
    fn cg_stops_at_maxit() {
        let a = random_spd(40, 3);
        let b = DVector::from_element(40, 1.0);
        let (_, rep) = conjugate_gradient(&SymmetricDense(&a), &b, 1e-14, 2).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 2);
        assert_eq!(rep.residuals.len(), 3);
    }

    #[test]
    fn minres_indefinite_diagonal() {
        let op = diag(&[1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let (x, rep) = minres(&op, &b, 1e-12, 10).unwrap();
        assert!(rep.iterations <= 2 && rep.converged);
        assert!((x - DVector::from_vec(vec![1.0, -1.0])).norm() < 1e-12);
    }

    #[test]
    fn minres_identity() {
        let op = diag(&[1.0; 4]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let (x, rep) = minres(&op, &b, 1e-12, 10).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!((x - b).norm() < 1e-13);
    }

    #[test]
    fn minres_matches_dense_solve() {
        let a = random_indefinite(50, 11);
        let b = DVector::from_fn(50, |i, _| 1.0 + (i as f64).cos());
        let (x, rep) = minres(&SymmetricDense(&a), &b, 1e-13, 1000).unwrap();
        assert!(rep.converged);
        let oracle = a.clone().lu().solve(&b).unwrap();
        assert!((&x - &oracle).norm() / oracle.norm() < 1e-8);
        assert!((&a * &x - &b).norm() / b.norm() < 1e-11);
    }

    #[test]
    fn condition_of_diagonals() {
        let c = estimate_condition(&diag(&[1.0, 10.0]), 0).unwrap();
        assert!((c.cond - 10.0).abs() < 1e-10);
        let c = estimate_condition(&diag(&[0.0, 1.0, 4.0]), 1).unwrap();
        assert!((c.cond - 4.0).abs() < 1e-10);
    }

    #[test]
    fn condition_matches_dense_eigenvalues() {
        let a = random_spd(120, 5);
        let c = estimate_condition(&SymmetricDense(&a), 0).unwrap();
        let eig = SymmetricEigen::new(a).eigenvalues;
        let exact = eig.max() / eig.min();
        assert!((c.cond - exact).abs() / exact < 1e-3);
    }

    #[test]
    fn solvers_are_deterministic() {
        let a = random_spd(60, 9);
        let b = DVector::from_element(60, 1.0);
        let (x1, r1) = conjugate_gradient(&SymmetricDense(&a), &b, 1e-10, 200).unwrap();
        let (x2, r2) = conjugate_gradient(&SymmetricDense(&a), &b, 1e-10, 200).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(x1, x2);
    }
}
