//! Patch (piecewise-constant) and pyramid (piecewise-linear) spaces, their Gram
//! matrices, and the dual pyramids living on the barycentric refinement.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{Point, TriangleMesh};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    /// Indicator functions of the triangles.
    Patch,
    /// Hat functions of the vertices.
    Pyramid,
}

#[derive(Debug, Clone, Copy)]
pub struct FunctionSpace<'a> {
    pub mesh: &'a TriangleMesh,
    pub kind: SpaceKind,
}

impl<'a> FunctionSpace<'a> {
    pub fn patch(mesh: &'a TriangleMesh) -> Self {
        Self {
            mesh,
            kind: SpaceKind::Patch,
        }
    }

    pub fn pyramid(mesh: &'a TriangleMesh) -> Self {
        Self {
            mesh,
            kind: SpaceKind::Pyramid,
        }
    }

    pub fn dof_count(&self) -> usize {
        match self.kind {
            SpaceKind::Patch => self.mesh.num_triangles(),
            SpaceKind::Pyramid => self.mesh.num_vertices(),
        }
    }

    /// Interpolation of `f` into the space: values at centroids for patches,
    /// at vertices for pyramids.
    pub fn interpolate(&self, f: impl Fn(&Point) -> f64) -> Vec<f64> {
        match self.kind {
            SpaceKind::Patch => (0..self.mesh.num_triangles())
                .map(|t| f(&self.mesh.centroid(t)))
                .collect(),
            SpaceKind::Pyramid => self.mesh.vertices.iter().map(f).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub kind: SpaceKind,
    pub matrix: CsrMatrix,
}

fn checked_areas(mesh: &TriangleMesh) -> Result<Vec<f64>> {
    let areas = mesh.areas();
    let scale = mesh.average_edge_length();
    match areas.iter().position(|&a| !(a > 1e-14 * scale * scale)) {
        Some(t) => Err(Error::DegenerateTriangle(t)),
        None => Ok(areas),
    }
}

/// Patch Gram matrix: `diag(area_n)`.
pub fn gram_p0(space: FunctionSpace<'_>) -> Result<GramMatrix> {
    assert_eq!(space.kind, SpaceKind::Patch);
    let areas = checked_areas(space.mesh)?;
    Ok(GramMatrix {
        kind: SpaceKind::Patch,
        matrix: CsrMatrix::diagonal_from(&areas),
    })
}

/// Pyramid Gram matrix: per triangle `A/6` on the diagonal and `A/12` off it.
pub fn gram_p1(space: FunctionSpace<'_>) -> Result<GramMatrix> {
    assert_eq!(space.kind, SpaceKind::Pyramid);
    let mesh = space.mesh;
    let areas = checked_areas(mesh)?;
    let mut triplets = Vec::with_capacity(9 * mesh.num_triangles());
    for (tri, &area) in mesh.triangles.iter().zip(&areas) {
        for (a, &i) in tri.iter().enumerate() {
            for (b, &j) in tri.iter().enumerate() {
                let v = if a == b { area / 6.0 } else { area / 12.0 };
                triplets.push((i, j, v));
            }
        }
    }
    let n = mesh.num_vertices();
    Ok(GramMatrix {
        kind: SpaceKind::Pyramid,
        matrix: CsrMatrix::from_triplets(n, n, triplets),
    })
}

/// Diagonal `(row sum)^{-1/2}` of a Gram matrix (mass lumping).
pub fn lumped_inverse_sqrt(gram: &GramMatrix) -> Result<Vec<f64>> {
    gram.matrix
        .row_sums()
        .into_iter()
        .map(|s| {
            if s > 0.0 {
                Ok(1.0 / s.sqrt())
            } else {
                Err(Error::NonPositive {
                    what: "Gram row sum",
                    value: s,
                })
            }
        })
        .collect()
}

/// Transient barycentric refinement: every triangle split into six around its
/// barycenter. Node order: primal vertices, edge midpoints, barycenters.
#[derive(Debug, Clone)]
pub struct BarycentricRefinement {
    pub mesh: TriangleMesh,
    /// Parent primal cell of each refined triangle.
    pub parent: Vec<usize>,
    /// `N_c × N_ref` nodal values of the dual pyramids on the refined mesh.
    pub dual_coefficients: CsrMatrix,
}

impl BarycentricRefinement {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let nv = mesh.num_vertices();
        let nc = mesh.num_triangles();
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut vertices = mesh.vertices.clone();
        for tri in &mesh.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edge_index.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    vertices.push((mesh.vertices[a] + mesh.vertices[b]) * 0.5);
                    vertices.len() - 1
                });
            }
        }
        let bary_offset = vertices.len();
        for t in 0..nc {
            vertices.push(mesh.centroid(t));
        }
        let mid = |a: usize, b: usize| edge_index[&(a.min(b), a.max(b))];

        let mut triangles = Vec::with_capacity(6 * nc);
        let mut parent = Vec::with_capacity(6 * nc);
        for (t, &[v0, v1, v2]) in mesh.triangles.iter().enumerate() {
            let b = bary_offset + t;
            let (m01, m12, m20) = (mid(v0, v1), mid(v1, v2), mid(v2, v0));
            for sub in [
                [v0, m01, b],
                [m01, v1, b],
                [v1, m12, b],
                [m12, v2, b],
                [v2, m20, b],
                [m20, v0, b],
            ] {
                triangles.push(sub);
                parent.push(t);
            }
        }

        let valence: Vec<usize> = mesh.vertex_triangles().iter().map(Vec::len).collect();
        let mut coeffs = Vec::with_capacity(7 * nc);
        for (t, &[v0, v1, v2]) in mesh.triangles.iter().enumerate() {
            coeffs.push((t, bary_offset + t, 1.0));
            for (a, b) in [(v0, v1), (v1, v2), (v2, v0)] {
                coeffs.push((t, mid(a, b), 0.5));
            }
            for v in [v0, v1, v2] {
                coeffs.push((t, v, 1.0 / valence[v] as f64));
            }
        }
        let nref = vertices.len();
        debug_assert_eq!(nref, nv + edge_index.len() + nc);
        Self {
            mesh: TriangleMesh::new(vertices, triangles),
            parent,
            dual_coefficients: CsrMatrix::from_triplets(nc, nref, coeffs),
        }
    }
}

/// Mixed Gram matrix between patches (rows) and dual pyramids (columns):
/// `[G̃]_{mn} = ∫ π_m λ̃_n dS`. Rows sum to the cell areas.
pub fn mixed_gram_dual(mesh: &TriangleMesh) -> Result<CsrMatrix> {
    checked_areas(mesh)?;
    let refinement = BarycentricRefinement::new(mesh);
    Ok(mixed_gram_from(&refinement, mesh.num_triangles()))
}

pub(crate) fn mixed_gram_from(refinement: &BarycentricRefinement, nc: usize) -> CsrMatrix {
    let fine = &refinement.mesh;
    // patch m against refined hat ν
    let mut triplets = Vec::with_capacity(3 * fine.num_triangles());
    for (s, tri) in fine.triangles.iter().enumerate() {
        let share = fine.area(s) / 3.0;
        for &node in tri {
            triplets.push((refinement.parent[s], node, share));
        }
    }
    let patch_vs_hat = CsrMatrix::from_triplets(nc, fine.num_vertices(), triplets);
    patch_vs_hat.matmul(&refinement.dual_coefficients.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_icosphere;
    use nalgebra::SymmetricEigen;

    fn single_triangle() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point::new(0.0, 0.0, 0.0),
                Point::new(1.0, 0.0, 0.0),
                Point::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
    }

    #[test]
    fn patch_gram_single_triangle() {
        let m = single_triangle();
        let g = gram_p0(FunctionSpace::patch(&m)).unwrap();
        assert_eq!(g.matrix.to_dense()[(0, 0)], 0.5);
        let d = lumped_inverse_sqrt(&g).unwrap();
        assert!((d[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pyramid_gram_single_triangle() {
        let m = single_triangle();
        let g = gram_p1(FunctionSpace::pyramid(&m)).unwrap();
        let d = g.matrix.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 / 12.0 } else { 1.0 / 24.0 };
                assert!((d[(i, j)] - e).abs() < 1e-16);
            }
        }
        let s = lumped_inverse_sqrt(&g).unwrap();
        assert!((s[0] - 6f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let m = TriangleMesh::new(
            vec![Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0), Point::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        );
        assert!(matches!(gram_p0(FunctionSpace::patch(&m)), Err(Error::DegenerateTriangle(0))));
        assert!(gram_p1(FunctionSpace::pyramid(&m)).is_err());
    }

    #[test]
    fn gram_traces_and_partition_of_unity() {
        let m = make_icosphere(1, 1.0).unwrap();
        let area = m.total_area();
        let g0 = gram_p0(FunctionSpace::patch(&m)).unwrap().matrix.to_dense();
        assert!((g0.trace() - area).abs() < 1e-12);
        let g1 = gram_p1(FunctionSpace::pyramid(&m)).unwrap();
        let ones = vec![1.0; m.num_vertices()];
        let quad: f64 = g1.matrix.mul_vec(&ones).iter().sum();
        assert!((quad - area).abs() < 1e-12);
        assert_eq!(g1.matrix.asymmetry(), 0.0);
        // row sums are a third of the incident area
        let incident = m.vertex_triangles();
        for (v, s) in g1.matrix.row_sums().iter().enumerate() {
            let a: f64 = incident[v].iter().map(|&t| m.area(t)).sum();
            assert!((s - a / 3.0).abs() < 1e-14);
        }
        let eig = SymmetricEigen::new(g1.matrix.to_dense()).eigenvalues;
        assert!(eig.min() > 0.0);
    }

    #[test]
    fn equal_area_triangles_have_equal_entries() {
        let m = TriangleMesh::new(
            vec![
                Point::new(0.0, 0.0, 0.0),
                Point::new(1.0, 0.0, 0.0),
                Point::new(0.0, 1.0, 0.0),
                Point::new(1.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [1, 3, 2]],
        );
        let g = gram_p0(FunctionSpace::patch(&m)).unwrap().matrix;
        assert_eq!(g.get(0, 0), g.get(1, 1));
    }

    #[test]
    fn lumping_is_spectrally_equivalent() {
        for s in 1..=3 {
            let m = make_icosphere(s, 1.0).unwrap();
            for g in [
                gram_p1(FunctionSpace::pyramid(&m)).unwrap(),
                gram_p0(FunctionSpace::patch(&m)).unwrap(),
            ] {
                let d = lumped_inverse_sqrt(&g).unwrap();
                let dense = g.matrix.to_dense();
                let n = d.len();
                let scaled = nalgebra::DMatrix::from_fn(n, n, |i, j| d[i] * dense[(i, j)] * d[j]);
                for i in 0..n {
                    let rs: f64 = scaled.row(i).sum();
                    assert!(rs > 0.5 && rs < 2.0);
                }
                let eig = SymmetricEigen::new(scaled).eigenvalues;
                assert!(eig.max() / eig.min() <= 10.0);
            }
        }
    }

    #[test]
    fn mixed_gram_partition_properties() {
        let m = make_icosphere(2, 1.0).unwrap();
        let g = mixed_gram_dual(&m).unwrap();
        let areas = m.areas();
        for (rs, a) in g.row_sums().iter().zip(&areas) {
            assert!((rs - a).abs() <= 1e-12 * a);
        }
        let total: f64 = g.values.iter().sum();
        assert!((total - m.total_area()).abs() < 1e-12);
        // column sums are the integrals of the dual pyramids
        let col = g.transpose().row_sums();
        let total_dual: f64 = col.iter().sum();
        assert!((total_dual - m.total_area()).abs() < 1e-12);
    }

    #[test]
    fn mixed_gram_is_diagonally_dominant() {
        // oracle: nodal-value quadrature of the dual pyramid over each refined triangle,
        // computed directly from the definition instead of through the sparse products
        let m = make_icosphere(0, 1.0).unwrap();
        let g = mixed_gram_dual(&m).unwrap().to_dense();
        let r = BarycentricRefinement::new(&m);
        let coeff = r.dual_coefficients.to_dense();
        for cell in 0..m.num_triangles() {
            for dual in 0..m.num_triangles() {
                let mut brute = 0.0;
                for (s, tri) in r.mesh.triangles.iter().enumerate() {
                    if r.parent[s] != cell {
                        continue;
                    }
                    let mean = tri.iter().map(|&n| coeff[(dual, n)]).sum::<f64>() / 3.0;
                    brute += mean * r.mesh.area(s);
                }
                assert!((brute - g[(cell, dual)]).abs() < 1e-14);
            }
            let diag = g[(cell, cell)];
            let off: f64 = (0..m.num_triangles())
                .filter(|&j| j != cell)
                .map(|j| g[(cell, j)].abs())
                .sum();
            assert!(diag > off);
        }
    }
}
