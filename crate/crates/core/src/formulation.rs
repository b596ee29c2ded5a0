//! Symmetric block system for the potentials `V_i` (pyramids) and the
//! fluxes `p_i = σ ∂_n u` (patches) on nested surfaces, and its right-hand
//! side for current dipoles.
//!
//! Unknowns are ordered `V_1, p_1, V_2, p_2, …`; with an insulating
//! exterior the outermost flux vanishes and is dropped. Potential rows are
//! tested with pyramids and flux rows with patches; both families are
//! signed so that the matrix is symmetric:
//!
//! ```text
//! [V_i, V_i] = −(σ_i + σ_{i+1}) W_ii     [V_i, V_j] = σ_c W_ij
//! [V_i, p_i] = −2 D*_ii                   [V_i, p_j] = D*_ij
//! [p_i, p_i] = (σ_i⁻¹ + σ_{i+1}⁻¹) S_ii   [p_i, p_j] = −σ_c⁻¹ S_ij
//! ```
//!
//! for neighbouring surfaces `j = i ± 1`, with `σ_c` the conductivity of
//! the compartment between them.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::bem_ops::{OperatorSet, OperatorTag};
use crate::error::{Error, Result};
use crate::geometry::{NestedModel, Point};
use crate::oracle::{dipole_unbounded, dipole_unbounded_gradient};
use crate::quadrature::triangle_rule_6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipoleSource {
    pub position: Point,
    pub moment: Point,
}

impl DipoleSource {
    pub fn new(position: Point, moment: Point) -> Self {
        Self { position, moment }
    }
}

/// Parses one dipole per line, `x y z qx qy qz`; `#` starts a comment.
pub fn parse_sources(text: &str) -> Result<Vec<DipoleSource>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        if values.len() != 6 {
            return Err(Error::Parse(format!(
                "line {}: expected 6 numbers, found {}",
                lineno + 1,
                values.len()
            )));
        }
        out.push(DipoleSource::new(
            Point::new(values[0], values[1], values[2]),
            Point::new(values[3], values[4], values[5]),
        ));
    }
    Ok(out)
}

pub fn load_sources(path: impl AsRef<Path>) -> Result<Vec<DipoleSource>> {
    parse_sources(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Potential,
    Flux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    pub surface: usize,
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub blocks: Vec<Block>,
    pub dim: usize,
}

impl Layout {
    pub fn for_model(model: &NestedModel) -> Self {
        let n = model.num_surfaces();
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (s, mesh) in model.surfaces.iter().enumerate() {
            blocks.push(Block {
                kind: BlockKind::Potential,
                surface: s,
                offset,
                len: mesh.num_vertices(),
            });
            offset += mesh.num_vertices();
            if s + 1 < n || !model.insulated() {
                blocks.push(Block {
                    kind: BlockKind::Flux,
                    surface: s,
                    offset,
                    len: mesh.num_triangles(),
                });
                offset += mesh.num_triangles();
            }
        }
        Layout { blocks, dim: offset }
    }

    pub fn find(&self, kind: BlockKind, surface: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.kind == kind && b.surface == surface)
    }

    pub fn potential(&self, surface: usize) -> &Block {
        self.find(BlockKind::Potential, surface).expect("every surface carries a potential")
    }

    pub fn flux(&self, surface: usize) -> Option<&Block> {
        self.find(BlockKind::Flux, surface)
    }

    /// Ones on every potential block: the gauge direction of an insulated model.
    pub fn potential_indicator(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.dim);
        for b in self.blocks.iter().filter(|b| b.kind == BlockKind::Potential) {
            e.rows_mut(b.offset, b.len).fill(1.0);
        }
        e
    }
}

/// Dense system `Z x = b`. After [`conductivity_rescale`] the stored matrix
/// and right-hand side are `D Z D` and `D b`, with `D = diag(scaling)`.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub layout: Layout,
    pub scaling: Vec<f64>,
    pub insulated: bool,
}

impl BlockSystem {
    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Null direction of the continuous operator in the stored scaling.
    pub fn kernel(&self) -> Option<DVector<f64>> {
        self.insulated.then(|| {
            let mut e = self.layout.potential_indicator();
            for (v, d) in e.iter_mut().zip(&self.scaling) {
                *v /= d;
            }
            e
        })
    }

    /// Maps a solution of the stored system back to physical unknowns.
    pub fn unscale(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(y.len(), |i, _| y[i] * self.scaling[i])
    }

    /// Shifts all potentials by one constant so that they have zero mean
    /// over the vertices of the outermost surface.
    pub fn fix_gauge(&self, x: &mut DVector<f64>) {
        let outer = self.layout.potential(self.layout.blocks.last().unwrap().surface);
        let mean = x.rows(outer.offset, outer.len).sum() / outer.len as f64;
        for b in self.layout.blocks.iter().filter(|b| b.kind == BlockKind::Potential) {
            x.rows_mut(b.offset, b.len).add_scalar_mut(-mean);
        }
    }

    /// Reference solve by dense LU. For insulated models the gauge direction
    /// `k̂` is projected out, `(QZQ + c k̂k̂ᵀ) y = Q b` with `Q = I − k̂k̂ᵀ`.
    pub fn solve_direct(&self) -> Result<DVector<f64>> {
        let mut m = crate::precond::deflated_matrix(self);
        let mut rhs = self.rhs.clone();
        if let Some(k) = self.kernel() {
            let k = k.normalize();
            m.ger(self.matrix.amax(), &k, &k, 1.0);
            rhs -= &k * k.dot(&rhs);
        }
        let y = m.lu().solve(&rhs).ok_or(Error::SingularEvaluation)?;
        let mut x = self.unscale(&y);
        if self.insulated {
            self.fix_gauge(&mut x);
        }
        Ok(x)
    }

    pub fn potential<'a>(&self, x: &'a DVector<f64>, surface: usize) -> nalgebra::DVectorView<'a, f64> {
        let b = self.layout.potential(surface);
        x.rows(b.offset, b.len)
    }
}

fn op<'a>(ops: &'a OperatorSet, tag: OperatorTag, i: usize, j: usize) -> Result<&'a DMatrix<f64>> {
    ops.get(tag, i, j)
        .ok_or_else(|| Error::InvalidModel(format!("operator block {tag:?} ({i}, {j}) is missing")))
}

/// Assembles the symmetric matrix; the right-hand side is left at zero.
pub fn assemble_system(model: &NestedModel, ops: &OperatorSet) -> Result<BlockSystem> {
    let layout = Layout::for_model(model);
    let sigma = &model.conductivities;
    let n = model.num_surfaces();
    let mut z = DMatrix::<f64>::zeros(layout.dim, layout.dim);
    let mut put = |row: &Block, col: &Block, m: &DMatrix<f64>, f: f64| {
        let mut view = z.view_mut((row.offset, col.offset), (row.len, col.len));
        view.zip_apply(m, |a, b| *a += f * b);
    };
    for s in 0..n {
        let vs = *layout.potential(s);
        let ps = layout.flux(s).copied();
        put(&vs, &vs, op(ops, OperatorTag::Hypersingular, s, s)?, -(sigma[s] + sigma[s + 1]));
        if let Some(ps) = ps {
            put(&vs, &ps, op(ops, OperatorTag::AdjointDoubleLayer, s, s)?, -2.0);
            put(&ps, &vs, op(ops, OperatorTag::DoubleLayer, s, s)?, -2.0);
            let f = 1.0 / sigma[s] + 1.0 / sigma[s + 1];
            put(&ps, &ps, op(ops, OperatorTag::SingleLayer, s, s)?, f);
        }
        for t in [s.wrapping_sub(1), s + 1] {
            if t >= n {
                continue;
            }
            // compartment shared by surfaces s and t
            let c = s.max(t);
            let vt = *layout.potential(t);
            let pt = layout.flux(t).copied();
            put(&vs, &vt, op(ops, OperatorTag::Hypersingular, s, t)?, sigma[c]);
            if let Some(pt) = pt {
                put(&vs, &pt, op(ops, OperatorTag::AdjointDoubleLayer, s, t)?, 1.0);
            }
            if let Some(ps) = ps {
                put(&ps, &vt, op(ops, OperatorTag::DoubleLayer, s, t)?, 1.0);
                if let Some(pt) = pt {
                    put(&ps, &pt, op(ops, OperatorTag::SingleLayer, s, t)?, -1.0 / sigma[c]);
                }
            }
        }
    }
    // remove rounding asymmetry of the mirrored blocks
    let zt = z.transpose();
    z += zt;
    z *= 0.5;
    Ok(BlockSystem {
        matrix: z,
        rhs: DVector::zeros(layout.dim),
        scaling: vec![1.0; layout.dim],
        insulated: model.insulated(),
        layout,
    })
}

/// Right-hand side for a set of dipoles, in the system's current scaling.
pub fn assemble_rhs(model: &NestedModel, system: &BlockSystem, sources: &[DipoleSource]) -> Result<DVector<f64>> {
    let n = model.num_surfaces();
    let mut compartments = Vec::with_capacity(sources.len());
    for src in sources {
        for mesh in &model.surfaces {
            let scale = mesh.average_edge_length();
            if mesh.distance(&src.position) <= 1e-9 * scale {
                let p = src.position;
                return Err(Error::SourceOnInterface(p.x, p.y, p.z));
            }
        }
        let c = model.compartment_of(&src.position);
        if model.conductivities[c] == 0.0 {
            return Err(Error::InvalidModel("source lies in the insulating exterior".into()));
        }
        compartments.push(c);
    }
    let rule = triangle_rule_6();
    let layout = &system.layout;
    let mut b = DVector::zeros(layout.dim);
    for s in 0..n {
        let mesh = &model.surfaces[s];
        let vs = *layout.potential(s);
        let ps = layout.flux(s).copied();
        for t in 0..mesh.num_triangles() {
            let p = mesh.corners(t);
            let normal = mesh.normal(t);
            let area = mesh.area(t);
            let tri = mesh.triangles[t];
            for q in &rule {
                let x = p[0] * q.bary[0] + p[1] * q.bary[1] + p[2] * q.bary[2];
                let w = q.weight * area;
                let (mut flux, mut pot) = (0.0, 0.0);
                for (src, &c) in sources.iter().zip(&compartments) {
                    // outer side enters with +, inner side with −
                    let sign = if c == s + 1 {
                        1.0
                    } else if c == s {
                        -1.0
                    } else {
                        continue;
                    };
                    let grad = dipole_unbounded_gradient(&x, &src.position, &src.moment, 1.0);
                    flux += sign * grad.dot(&normal);
                    pot += sign * dipole_unbounded(&x, &src.position, &src.moment, 1.0) / model.conductivities[c];
                }
                for a in 0..3 {
                    b[vs.offset + tri[a]] -= w * q.bary[a] * flux;
                }
                if let Some(ps) = ps {
                    b[ps.offset + t] += w * pot;
                }
            }
        }
    }
    for (v, d) in b.iter_mut().zip(&system.scaling) {
        *v *= d;
    }
    Ok(b)
}

/// Symmetric diagonal rescaling that balances the conductivity factors of
/// the diagonal blocks: potentials by `(σ_i + σ_{i+1})^{-1/2}`, fluxes by
/// `(σ_i⁻¹ + σ_{i+1}⁻¹)^{-1/2}`. Applies to the stored matrix and right-hand side.
pub fn conductivity_rescale(model: &NestedModel, system: &mut BlockSystem) {
    let sigma = &model.conductivities;
    let mut d = vec![1.0; system.dim()];
    for b in &system.layout.blocks {
        let (si, so) = (sigma[b.surface], sigma[b.surface + 1]);
        let f = match b.kind {
            BlockKind::Potential => 1.0 / (si + so).sqrt(),
            BlockKind::Flux => 1.0 / (1.0 / si + 1.0 / so).sqrt(),
        };
        d[b.range()].fill(f);
    }
    let n = system.dim();
    for j in 0..n {
        for i in 0..n {
            system.matrix[(i, j)] *= d[i] * d[j];
        }
        system.rhs[j] *= d[j];
    }
    for (s, f) in system.scaling.iter_mut().zip(&d) {
        *s *= f;
    }
}

#[cfg(test)]
mod tests;
