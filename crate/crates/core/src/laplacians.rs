//! Primal (cotangent) and dual Laplace–Beltrami stiffness matrices and the
//! deflated pseudo-inverse of the primal one.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::krylov::conjugate_gradient;
use crate::spaces::{BarycentricRefinement, GramMatrix};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplacianKind {
    /// `N_v × N_v`, pyramid functions.
    PrimalP1,
    /// `N_c × N_c`, dual pyramids on the barycentric refinement.
    DualCell,
}

#[derive(Debug, Clone)]
pub struct LaplacianMatrix {
    pub kind: LaplacianKind,
    pub matrix: CsrMatrix,
}

/// Relative residual of the inner solves behind [`pinv_apply`].
pub const PINV_TOLERANCE: f64 = 1e-10;

pub(crate) fn cotangent_stiffness(mesh: &TriangleMesh) -> Result<CsrMatrix> {
    let n = mesh.num_vertices();
    let mut triplets = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = mesh.corners(t);
        let twice_area = (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
        if !(twice_area > 0.0) {
            return Err(Error::DegenerateTriangle(t));
        }
        for k in 0..3 {
            // angle at corner k, opposite the edge (i, j)
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            let u = p[i] - p[k];
            let v = p[j] - p[k];
            let w = -0.5 * u.dot(&v) / twice_area;
            triplets.push((tri[i], tri[j], w));
            triplets.push((tri[j], tri[i], w));
            triplets.push((tri[i], tri[i], -w));
            triplets.push((tri[j], tri[j], -w));
        }
    }
    Ok(CsrMatrix::from_triplets(n, n, triplets))
}

/// P1 stiffness matrix with cotangent weights:
/// `L_mn = −(cot α + cot β)/2`, diagonal equal to minus the off-diagonal row sum.
pub fn primal_laplace_beltrami(mesh: &TriangleMesh) -> Result<LaplacianMatrix> {
    Ok(LaplacianMatrix {
        kind: LaplacianKind::PrimalP1,
        matrix: cotangent_stiffness(mesh)?,
    })
}

/// Stiffness matrix of the dual pyramids, `C L_ref Cᵀ` on the barycentric
/// refinement.
pub fn dual_laplacian(mesh: &TriangleMesh) -> Result<LaplacianMatrix> {
    let refinement = BarycentricRefinement::new(mesh);
    dual_laplacian_from(&refinement)
}

pub(crate) fn dual_laplacian_from(refinement: &BarycentricRefinement) -> Result<LaplacianMatrix> {
    let fine = cotangent_stiffness(&refinement.mesh)?;
    let c = &refinement.dual_coefficients;
    let matrix = c.matmul(&fine).matmul(&c.transpose()).symmetrized();
    Ok(LaplacianMatrix {
        kind: LaplacianKind::DualCell,
        matrix,
    })
}

/// Pseudo-inverse of a primal Laplacian in the Gram-weighted sense: the input
/// is projected with `I − a 1ᵀ / A` (`a = G·1`, `A = 1ᵀ a`), the singular
/// system is solved by conjugate gradients, and the result is shifted to
/// `aᵀx = 0`. The resulting map is symmetric with kernel `a`.
///
/// [`LaplacianPseudoInverse::factored`] replaces the iterative solve by a
/// dense Cholesky factor of `L + c 1 1ᵀ`, which gives the same map to
/// rounding and is exactly symmetric.
#[derive(Debug, Clone)]
pub struct LaplacianPseudoInverse {
    pub laplacian: CsrMatrix,
    pub mass: Vec<f64>,
    pub total: f64,
    pub tol: f64,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl LaplacianPseudoInverse {
    pub fn new(laplacian: &LaplacianMatrix, gram: &GramMatrix) -> Self {
        let mass = gram.matrix.row_sums();
        let total = mass.iter().sum();
        Self {
            laplacian: laplacian.matrix.clone(),
            mass,
            total,
            tol: PINV_TOLERANCE,
            factor: None,
        }
    }

    pub fn factored(laplacian: &LaplacianMatrix, gram: &GramMatrix) -> Result<Self> {
        let mut p = Self::new(laplacian, gram);
        let n = p.dim();
        let mut dense: DMatrix<f64> = p.laplacian.to_dense();
        // any positive c works on the range; this one keeps the scale
        let c = dense.diagonal().mean() / n as f64;
        dense.add_scalar_mut(c);
        p.factor = Some(dense.cholesky().ok_or_else(|| {
            Error::InvalidMesh("laplacian has a kernel larger than the constants".into())
        })?);
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn apply(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: rhs.len(),
            });
        }
        let mean = rhs.sum() / self.total;
        let projected = DVector::from_fn(n, |i, _| rhs[i] - self.mass[i] * mean);
        let scale = rhs.norm().max(f64::MIN_POSITIVE);
        if projected.norm() <= 1e-12 * scale {
            return Ok(DVector::zeros(n));
        }
        let mut x = match &self.factor {
            Some(f) => f.solve(&projected),
            None => {
                let (x, report) = conjugate_gradient(&self.laplacian, &projected, self.tol, 10 * n)?;
                if !report.converged {
                    return Err(Error::NotConverged {
                        solver: "laplacian pseudo-inverse",
                        iterations: report.iterations,
                        residual: report.final_residual(),
                    });
                }
                x
            }
        };
        let shift = self
            .mass
            .iter()
            .zip(x.iter())
            .map(|(a, v)| a * v)
            .sum::<f64>()
            / self.total;
        x.add_scalar_mut(-shift);
        Ok(x)
    }
}

/// One-shot form of [`LaplacianPseudoInverse::apply`].
pub fn pinv_apply(l: &LaplacianMatrix, g: &GramMatrix, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    LaplacianPseudoInverse::new(l, g).apply(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_icosphere, Point};
    use crate::spaces::{gram_p1, BarycentricRefinement, FunctionSpace};
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn generalized_eigenvalues(k: &DMatrix<f64>, m: &DMatrix<f64>) -> Vec<f64> {
        let chol = m.clone().cholesky().unwrap();
        let linv = chol.l().try_inverse().unwrap();
        let a = &linv * k * linv.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let mut e: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    #[test]
    fn right_angles_have_zero_weight() {
        let mesh = TriangleMesh::new(
            vec![
                Point::new(0.0, 0.0, 0.0),
                Point::new(1.0, 0.0, 0.0),
                Point::new(1.0, 1.0, 0.0),
                Point::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let l = primal_laplace_beltrami(&mesh).unwrap().matrix;
        assert!(l.get(0, 2).abs() < 1e-15);
        // the 45° corners contribute cot 45° / 2 on the square's sides
        assert!((l.get(0, 1) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn primal_rows_sum_to_zero_and_symmetric() {
        let mesh = make_icosphere(2, 1.0).unwrap();
        let l = primal_laplace_beltrami(&mesh).unwrap().matrix;
        for s in l.row_sums() {
            assert!(s.abs() < 1e-12);
        }
        assert!(l.asymmetry() < 1e-15);
    }

    #[test]
    fn primal_sphere_spectrum() {
        let mesh = make_icosphere(3, 1.0).unwrap();
        let l = primal_laplace_beltrami(&mesh).unwrap().matrix.to_dense();
        let g = gram_p1(FunctionSpace::pyramid(&mesh)).unwrap().matrix.to_dense();
        let e = generalized_eigenvalues(&l, &g);
        assert!(e[0].abs() < 1e-10);
        assert!(e[1] > 1e-6);
        for k in 1..=3 {
            assert!((e[k] - 2.0).abs() / 2.0 < 0.02, "eigenvalue {}", e[k]);
        }
    }

    #[test]
    fn dual_laplacian_is_psd_with_constant_kernel() {
        let mesh = make_icosphere(2, 1.0).unwrap();
        let l = dual_laplacian(&mesh).unwrap();
        assert_eq!(l.kind, LaplacianKind::DualCell);
        for s in l.matrix.row_sums() {
            assert!(s.abs() < 1e-12);
        }
        assert_eq!(l.matrix.asymmetry(), 0.0);
        let e = SymmetricEigen::new(l.matrix.to_dense()).eigenvalues;
        assert!(e.min() >= -1e-10 * e.max());
        let zeros = e.iter().filter(|&&v| v.abs() < 1e-10 * e.max()).count();
        assert_eq!(zeros, 1);
    }

    #[test]
    fn dual_laplacian_spectrum_grows_quadratically() {
        // dual-dual Gram through the refinement as the mass
        let mesh = make_icosphere(3, 1.0).unwrap();
        let r = BarycentricRefinement::new(&mesh);
        let l = dual_laplacian_from(&r).unwrap().matrix.to_dense();
        let fine_mass = gram_p1(FunctionSpace::pyramid(&r.mesh)).unwrap().matrix;
        let c = &r.dual_coefficients;
        let m = c.matmul(&fine_mass).matmul(&c.transpose()).to_dense();
        let e = generalized_eigenvalues(&l, &m);
        // degree l occupies indices l² .. (l+1)² − 1
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for deg in 1..=4usize {
            let band = &e[deg * deg..(deg + 1) * (deg + 1)];
            let mean = band.iter().sum::<f64>() / band.len() as f64;
            let exact = (deg * (deg + 1)) as f64;
            assert!((mean - exact).abs() / exact < 0.1, "degree {deg}: {mean}");
            xs.push(((deg as f64) + 0.5).ln());
            ys.push(mean.ln());
        }
        let slope = crate::oracle::log_log_slope(&xs, &ys);
        assert!((slope - 2.0).abs() < 0.3, "slope {slope}");
    }

    fn sphere_pinv() -> (LaplacianMatrix, GramMatrix, TriangleMesh) {
        let mesh = make_icosphere(2, 1.0).unwrap();
        let l = primal_laplace_beltrami(&mesh).unwrap();
        let g = gram_p1(FunctionSpace::pyramid(&mesh)).unwrap();
        (l, g, mesh)
    }

    #[test]
    fn pinv_annihilates_constant_functional() {
        let (l, g, mesh) = sphere_pinv();
        let constant = g.matrix.mul_dvec(&DVector::from_element(mesh.num_vertices(), 3.0));
        let x = pinv_apply(&l, &g, &constant).unwrap();
        assert_eq!(x.norm(), 0.0);
    }

    #[test]
    fn pinv_inverts_on_zero_mean_vectors() {
        let (l, g, mesh) = sphere_pinv();
        let n = mesh.num_vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x0 = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let a = g.matrix.row_sums();
        let total: f64 = a.iter().sum();
        let shift = a.iter().zip(x0.iter()).map(|(p, q)| p * q).sum::<f64>() / total;
        x0.add_scalar_mut(-shift);
        let rhs = l.matrix.mul_dvec(&x0);
        let x = pinv_apply(&l, &g, &rhs).unwrap();
        assert!((&x - &x0).norm() / x0.norm() < 1e-8);
        // pinv ∘ L ∘ pinv = pinv
        let y = pinv_apply(&l, &g, &x0).unwrap();
        let yy = pinv_apply(&l, &g, &l.matrix.mul_dvec(&y)).unwrap();
        assert!((&yy - &y).norm() / y.norm() < 1e-8);
    }

    #[test]
    fn factored_pinv_matches_iterative() {
        let (l, g, mesh) = sphere_pinv();
        let n = mesh.num_vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let direct = LaplacianPseudoInverse::factored(&l, &g).unwrap();
        let a = direct.apply(&r).unwrap();
        let b = pinv_apply(&l, &g, &r).unwrap();
        assert!((&a - &b).norm() / a.norm() < 1e-8);
        let r2 = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let lhs = r2.dot(&a);
        let rhs = r.dot(&direct.apply(&r2).unwrap());
        assert!((lhs - rhs).abs() < 1e-13 * lhs.abs().max(1.0));
    }

    #[test]
    fn pinv_is_linear_and_symmetric() {
        let (l, g, mesh) = sphere_pinv();
        let n = mesh.num_vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r1 = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let r2 = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let p = LaplacianPseudoInverse::new(&l, &g);
        let combo = p.apply(&(&r1 * 2.0 - &r2 * 0.7)).unwrap();
        let split = p.apply(&r1).unwrap() * 2.0 - p.apply(&r2).unwrap() * 0.7;
        assert!((&combo - &split).norm() / combo.norm() < 1e-9);
        let lhs = r2.dot(&p.apply(&r1).unwrap());
        let rhs = r1.dot(&p.apply(&r2).unwrap());
        assert!((lhs - rhs).abs() / lhs.abs() < 1e-8);
    }
}
