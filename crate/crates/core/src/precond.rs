//! The preconditioned operator `A = M Z P Z M` and its deflation.
//!
//! `M` holds the lumped inverse square roots of the pyramid and patch Gram
//! matrices. `P` is block diagonal per surface:
//!
//! * potentials: the Gram-weighted Laplace–Beltrami pseudo-inverse, completed
//!   by `γ_V (1ᵀt / |Γ|) 1` on the constants,
//! * fluxes: `G̃⁻ᵀ Λ̃ G̃⁻¹` with the dual Laplacian `Λ̃` and the patch/dual
//!   Gram matrix `G̃`, completed by `γ_p (1ᵀt / |Γ|) 1`.
//!
//! Both completions make `P` positive definite, so the kernel of `A` is that
//! of `Z`: the common constant of all potentials when the exterior is
//! insulating. That direction, `k`, is an approximate null vector of the
//! discrete `Z`; the operator works with `Z_d = QZQ`, `Q = I − k̂k̂ᵀ`, for
//! which it is exact.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::formulation::{BlockKind, BlockSystem};
use crate::geometry::NestedModel;
use crate::krylov::{
    conjugate_gradient, estimate_condition_with, largest_eigenvalue, symmetric_matvec, FnOperator, LinearOperator,
    SolveReport, ConditionEstimate, LANCZOS_MAX_ITERATIONS,
};
use crate::laplacians::{dual_laplacian_from, primal_laplace_beltrami, LaplacianPseudoInverse};
use crate::spaces::{gram_p0, gram_p1, lumped_inverse_sqrt, mixed_gram_from, BarycentricRefinement, FunctionSpace};
use crate::sparse::CsrMatrix;

struct PotentialPart {
    range: Range<usize>,
    pinv: LaplacianPseudoInverse,
    area: f64,
    gamma: f64,
}

struct FluxPart {
    range: Range<usize>,
    mixed: LU<f64, Dyn, Dyn>,
    mixed_t: LU<f64, Dyn, Dyn>,
    laplacian: CsrMatrix,
    area: f64,
    gamma: f64,
}

/// Weights of the rank-one completions of `P`, relative to the defaults
/// `γ_V = |Γ|/(8π)` and `γ_p = 8π/|Γ|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecondOptions {
    pub potential_completion: f64,
    pub flux_completion: f64,
}

impl Default for PrecondOptions {
    fn default() -> Self {
        Self {
            potential_completion: 1.0,
            flux_completion: 1.0,
        }
    }
}

pub struct PrecondOperator<'a> {
    system: &'a BlockSystem,
    m: DVector<f64>,
    potentials: Vec<PotentialPart>,
    fluxes: Vec<FluxPart>,
    kernel: Option<DVector<f64>>,
    deflation: Option<DVector<f64>>,
    projected_rhs: DVector<f64>,
}

/// Result of [`PrecondOperator::solve`], in physical (unscaled) unknowns.
#[derive(Debug, Clone)]
pub struct PreconditionedSolve {
    pub solution: DVector<f64>,
    pub report: SolveReport,
    /// `‖Z_d x − Q b‖ / ‖Q b‖` in the stored scaling.
    pub residual: f64,
    /// CG iterations spent in refinement rounds after the main solve.
    pub refinement_iterations: usize,
}

/// Refinement rounds allowed to bring the recovered residual within bounds.
pub const MAX_REFINEMENTS: usize = 4;

fn project(x: &DVector<f64>, unit: &Option<DVector<f64>>) -> DVector<f64> {
    match unit {
        Some(k) => x - k * k.dot(x),
        None => x.clone(),
    }
}

impl<'a> PrecondOperator<'a> {
    pub fn build(system: &'a BlockSystem, model: &NestedModel) -> Result<Self> {
        Self::build_with(system, model, PrecondOptions::default())
    }

    pub fn build_with(system: &'a BlockSystem, model: &NestedModel, options: PrecondOptions) -> Result<Self> {
        let n = system.dim();
        let mut m = DVector::zeros(n);
        let mut potentials = Vec::new();
        let mut fluxes = Vec::new();
        for block in &system.layout.blocks {
            let mesh = &model.surfaces[block.surface];
            let area = mesh.total_area();
            match block.kind {
                BlockKind::Potential => {
                    let gram = gram_p1(FunctionSpace::pyramid(mesh))?;
                    for (k, v) in lumped_inverse_sqrt(&gram)?.into_iter().enumerate() {
                        m[block.offset + k] = v;
                    }
                    let lap = primal_laplace_beltrami(mesh)?;
                    potentials.push(PotentialPart {
                        range: block.range(),
                        pinv: LaplacianPseudoInverse::factored(&lap, &gram)?,
                        area,
                        gamma: options.potential_completion * area / (8.0 * PI),
                    });
                }
                BlockKind::Flux => {
                    let gram = gram_p0(FunctionSpace::patch(mesh))?;
                    for (k, v) in lumped_inverse_sqrt(&gram)?.into_iter().enumerate() {
                        m[block.offset + k] = v;
                    }
                    let refinement = BarycentricRefinement::new(mesh);
                    let mixed = mixed_gram_from(&refinement, mesh.num_triangles()).to_dense();
                    let mixed_t = mixed.transpose();
                    fluxes.push(FluxPart {
                        range: block.range(),
                        mixed: mixed.lu(),
                        mixed_t: mixed_t.lu(),
                        laplacian: dual_laplacian_from(&refinement)?.matrix,
                        area,
                        gamma: options.flux_completion * 8.0 * PI / area,
                    });
                }
            }
        }
        let kernel = system.kernel().map(|k| k.normalize());
        let deflation = kernel.as_ref().map(|k| {
            DVector::from_fn(n, |i, _| k[i] / m[i]).normalize()
        });
        let projected_rhs = project(&system.rhs, &kernel);
        Ok(Self {
            system,
            m,
            potentials,
            fluxes,
            kernel,
            deflation,
            projected_rhs,
        })
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// Unit vector spanning the kernel of `A`, if any.
    pub fn deflation_basis(&self) -> Option<&DVector<f64>> {
        self.deflation.as_ref()
    }

    /// `Q b`, the right-hand side of the deflated unpreconditioned system.
    pub fn projected_rhs(&self) -> &DVector<f64> {
        &self.projected_rhs
    }

    pub fn m_diagonal(&self) -> &DVector<f64> {
        &self.m
    }

    /// `Z_d x`.
    pub fn apply_z(&self, x: &DVector<f64>) -> DVector<f64> {
        let y = symmetric_matvec(&self.system.matrix, &project(x, &self.kernel));
        project(&y, &self.kernel)
    }

    pub fn apply_p(&self, t: &DVector<f64>) -> Result<DVector<f64>> {
        if t.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: t.len(),
            });
        }
        let mut out = DVector::zeros(t.len());
        for part in &self.potentials {
            let local = t.rows(part.range.start, part.range.len()).into_owned();
            let mut x = part.pinv.apply(&local)?;
            x.add_scalar_mut(part.gamma * local.sum() / part.area);
            out.rows_mut(part.range.start, part.range.len()).copy_from(&x);
        }
        for part in &self.fluxes {
            let local = t.rows(part.range.start, part.range.len()).into_owned();
            let dual = part.mixed.solve(&local).ok_or(Error::SingularEvaluation)?;
            let weak = part.laplacian.mul_dvec(&dual);
            let mut x = part.mixed_t.solve(&weak).ok_or(Error::SingularEvaluation)?;
            x.add_scalar_mut(part.gamma * local.sum() / part.area);
            out.rows_mut(part.range.start, part.range.len()).copy_from(&x);
        }
        Ok(out)
    }

    fn scale_m(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.m)
    }

    /// Right-hand side `Q_u M Z_d P Q b` of the preconditioned system.
    pub fn rhs(&self) -> Result<DVector<f64>> {
        let t = self.apply_p(&self.projected_rhs)?;
        Ok(project(&self.scale_m(&self.apply_z(&t)), &self.deflation))
    }

    /// `x = M y` mapped back to physical unknowns, gauge-fixed, with the
    /// residual of the deflated system.
    pub fn recover_solution(&self, y: &DVector<f64>) -> (DVector<f64>, f64) {
        let xs = self.scale_m(y);
        let r = self.apply_z(&xs) - &self.projected_rhs;
        let bn = self.projected_rhs.norm();
        let residual = if bn > 0.0 { r.norm() / bn } else { r.norm() };
        let mut x = self.system.unscale(&xs);
        if self.system.insulated {
            self.system.fix_gauge(&mut x);
        }
        (x, residual)
    }

    /// CG on the preconditioned system. A small preconditioned residual
    /// does not bound the recovered one tightly, so up to
    /// [`MAX_REFINEMENTS`] correction solves on the recovered residual
    /// follow; if it still exceeds `recovery_factor · tol` the deflation is
    /// inconsistent.
    pub fn solve(&self, tol: f64, maxit: usize, recovery_factor: f64) -> Result<PreconditionedSolve> {
        let c = self.rhs()?;
        let (mut y, report) = conjugate_gradient(self, &c, tol, maxit)?;
        let (mut solution, mut residual) = self.recover_solution(&y);
        let mut refinement_iterations = 0;
        if report.converged {
            let mut rounds = 0;
            while residual > recovery_factor * tol && rounds < MAX_REFINEMENTS {
                let r = &self.projected_rhs - self.apply_z(&self.scale_m(&y));
                let t = self.apply_p(&r)?;
                let cr = project(&self.scale_m(&self.apply_z(&t)), &self.deflation);
                let (dy, rep) = conjugate_gradient(self, &cr, tol, maxit)?;
                y += dy;
                refinement_iterations += rep.iterations;
                (solution, residual) = self.recover_solution(&y);
                rounds += 1;
            }
            if residual > recovery_factor * tol {
                return Err(Error::InconsistentSolution(residual));
            }
        }
        Ok(PreconditionedSolve {
            solution,
            report,
            residual,
            refinement_iterations,
        })
    }

    pub fn condition(&self) -> Result<ConditionEstimate> {
        estimate_condition_with(self, usize::from(self.deflation.is_some()), 2 * LANCZOS_MAX_ITERATIONS, 1e-4)
    }
}

impl LinearOperator for PrecondOperator<'_> {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let xm = self.scale_m(&project(x, &self.deflation));
        let t = self.apply_p(&self.apply_z(&xm))?;
        Ok(project(&self.scale_m(&self.apply_z(&t)), &self.deflation))
    }
}

/// Dense `Z_d = QZQ` of the stored system.
pub fn deflated_matrix(system: &BlockSystem) -> DMatrix<f64> {
    let mut z = system.matrix.clone();
    if let Some(k) = system.kernel() {
        let k = k.normalize();
        let zk = symmetric_matvec(&z, &k);
        let kzk = k.dot(&zk);
        // QZQ = Z − k (Zk)ᵀ − (Zk) kᵀ + (kᵀZk) k kᵀ
        z.ger(-1.0, &k, &zk, 1.0);
        z.ger(-1.0, &zk, &k, 1.0);
        z.ger(kzk, &k, &k, 1.0);
        let zt = z.transpose();
        z += zt;
        z *= 0.5;
    }
    z
}

/// Condition number `|λ|_max / |λ|_min` of the deflated, unpreconditioned
/// matrix over the complement of its kernel. The top of the spectrum comes
/// from Lanczos on `Z_d²`; the bottom from Lanczos on `(Z_d + c k̂k̂ᵀ)⁻²`
/// with a dense LU factorization.
pub fn unpreconditioned_condition(system: &BlockSystem) -> Result<ConditionEstimate> {
    let zd = deflated_matrix(system);
    let n = zd.nrows();
    let top = {
        let squared = FnOperator {
            dim: n,
            f: |x: &DVector<f64>| Ok(symmetric_matvec(&zd, &symmetric_matvec(&zd, x))),
        };
        largest_eigenvalue(&squared, LANCZOS_MAX_ITERATIONS, 1e-6)?.sqrt()
    };
    let mut shifted = zd;
    if let Some(k) = system.kernel() {
        let k = k.normalize();
        shifted.ger(top, &k, &k, 1.0);
    }
    let lu = shifted.lu();
    let inverse_squared = FnOperator {
        dim: n,
        f: |x: &DVector<f64>| {
            let y = lu.solve(x).ok_or(Error::SingularEvaluation)?;
            lu.solve(&y).ok_or(Error::SingularEvaluation)
        },
    };
    let bottom = 1.0 / largest_eigenvalue(&inverse_squared, LANCZOS_MAX_ITERATIONS, 1e-6)?.sqrt();
    Ok(ConditionEstimate {
        lambda_min: bottom,
        lambda_max: top,
        cond: top / bottom,
        iterations: 0,
    })
}

#[cfg(test)]
mod tests;
