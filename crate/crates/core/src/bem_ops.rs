//! Galerkin matrices of the single-layer, double-layer, adjoint double-layer
//! and hypersingular operators between two surfaces, with `G = 1/(4πR)`.
//!
//! Patch (P0) functions test and represent the Neumann-type unknowns,
//! pyramids (P1) the potentials:
//!
//! * `S_ij`  — `N_c^i × N_c^j`, `∫∫ G`,
//! * `D_ij`  — `N_c^i × N_v^j`, kernel `n_y·(x−y)/(4π|x−y|³)`,
//! * `D*_ij` — `N_v^i × N_c^j`, equal to `D_jiᵀ`,
//! * `W_ij`  — `N_v^i × N_v^j`, the positive form `−⟨∂_n𝒟 u, v⟩`,
//!   computed from `S_ij` through surface curls.
//!
//! Pairs of triangles that touch are integrated with Sauter–Schwab
//! transformations; separated pairs with product rules chosen by
//! distance-to-size ratio and recursive subdivision for very close pairs.

mod dump;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{NestedModel, Point, TriangleMesh};
use crate::quadrature::{
    singular_pair_rule, triangle_rule_3, triangle_rule_6, triangle_rule_collapsed, PairPoint, PairRelation, TriPoint,
};

pub use dump::{read_block, write_block};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OperatorTag {
    SingleLayer,
    DoubleLayer,
    AdjointDoubleLayer,
    Hypersingular,
}

impl OperatorTag {
    pub fn code(self) -> u32 {
        match self {
            OperatorTag::SingleLayer => 0,
            OperatorTag::DoubleLayer => 1,
            OperatorTag::AdjointDoubleLayer => 2,
            OperatorTag::Hypersingular => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => OperatorTag::SingleLayer,
            1 => OperatorTag::DoubleLayer,
            2 => OperatorTag::AdjointDoubleLayer,
            3 => OperatorTag::Hypersingular,
            _ => return None,
        })
    }
}

/// One operator between the test surface `target` and trial surface `source`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBlock {
    pub tag: OperatorTag,
    pub target: usize,
    pub source: usize,
    pub matrix: DMatrix<f64>,
}

/// A mesh together with its index in the model; equal indices mean the same
/// surface and trigger singular quadrature.
#[derive(Debug, Clone, Copy)]
pub struct Surface<'a> {
    pub index: usize,
    pub mesh: &'a TriangleMesh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    /// Gauss points per transformed coordinate for touching pairs.
    pub singular_order: usize,
    /// Centroid distance over diameter at or above which the 3-point rule is used.
    pub far_ratio: f64,
    /// Threshold for the 6-point rule.
    pub near_ratio: f64,
    /// Below this ratio the larger triangle is subdivided.
    pub close_ratio: f64,
    /// Collapsed Gauss order for pairs between `close_ratio` and `near_ratio`.
    pub close_order: usize,
    pub max_refinement: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            singular_order: 4,
            far_ratio: 3.0,
            near_ratio: 1.5,
            close_ratio: 0.75,
            close_order: 5,
            max_refinement: 6,
        }
    }
}

#[derive(Debug, Clone)]
struct Tri {
    p: [Point; 3],
    idx: [usize; 3],
    normal: Point,
    area: f64,
}

fn triangles(mesh: &TriangleMesh) -> Result<Vec<Tri>> {
    mesh.triangles
        .iter()
        .enumerate()
        .map(|(t, &idx)| {
            let p = mesh.corners(t);
            let av = (p[1] - p[0]).cross(&(p[2] - p[0])) * 0.5;
            let area = av.norm();
            if !(area > 0.0) {
                return Err(Error::DegenerateTriangle(t));
            }
            Ok(Tri {
                p,
                idx,
                normal: av / area,
                area,
            })
        })
        .collect()
}

/// Sub-triangle of a mesh triangle, carrying the parent barycentrics of its
/// corners so that basis functions can be evaluated.
#[derive(Debug, Clone, Copy)]
struct Patch {
    p: [Point; 3],
    b: [[f64; 3]; 3],
    area: f64,
}

impl Patch {
    fn root(t: &Tri) -> Self {
        Patch {
            p: t.p,
            b: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            area: t.area,
        }
    }

    fn centroid(&self) -> Point {
        (self.p[0] + self.p[1] + self.p[2]) / 3.0
    }

    fn diameter(&self) -> f64 {
        (self.p[0] - self.p[1])
            .norm()
            .max((self.p[1] - self.p[2]).norm())
            .max((self.p[2] - self.p[0]).norm())
    }

    fn children(&self) -> [Patch; 4] {
        let mid = |i: usize, j: usize| {
            let p = (self.p[i] + self.p[j]) * 0.5;
            let b = [
                0.5 * (self.b[i][0] + self.b[j][0]),
                0.5 * (self.b[i][1] + self.b[j][1]),
                0.5 * (self.b[i][2] + self.b[j][2]),
            ];
            (p, b)
        };
        let (p01, b01) = mid(0, 1);
        let (p12, b12) = mid(1, 2);
        let (p20, b20) = mid(2, 0);
        let area = self.area * 0.25;
        [
            Patch { p: [self.p[0], p01, p20], b: [self.b[0], b01, b20], area },
            Patch { p: [p01, self.p[1], p12], b: [b01, self.b[1], b12], area },
            Patch { p: [p20, p12, self.p[2]], b: [b20, b12, self.b[2]], area },
            Patch { p: [p01, p12, p20], b: [b01, b12, b20], area },
        ]
    }

    fn map(&self, q: &[f64; 3]) -> (Point, [f64; 3]) {
        let x = self.p[0] * q[0] + self.p[1] * q[1] + self.p[2] * q[2];
        let mut lam = [0.0; 3];
        for (k, l) in lam.iter_mut().enumerate() {
            *l = q[0] * self.b[0][k] + q[1] * self.b[1][k] + q[2] * self.b[2][k];
        }
        (x, lam)
    }
}

/// Integrals over one pair `(τ_x, τ_y)`:
/// `s = ∫∫ G`, `dxy[k] = ∫∫ ∂_{n_y}G λ_k^y`, `dyx[k] = ∫∫ ∂_{n_x}G λ_k^x`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct PairValues {
    s: f64,
    dxy: [f64; 3],
    dyx: [f64; 3],
}

struct PairIntegrator {
    opts: QuadratureOptions,
    identical: Vec<PairPoint>,
    edge: Vec<PairPoint>,
    vertex: Vec<PairPoint>,
    rule3: Vec<TriPoint>,
    rule6: Vec<TriPoint>,
    close: Vec<TriPoint>,
}

const FOUR_PI_INV: f64 = 1.0 / (4.0 * PI);

impl PairIntegrator {
    fn new(opts: QuadratureOptions) -> Self {
        let n = opts.singular_order;
        Self {
            opts,
            identical: singular_pair_rule(PairRelation::Identical, n),
            edge: singular_pair_rule(PairRelation::CommonEdge, n),
            vertex: singular_pair_rule(PairRelation::CommonVertex, n),
            rule3: triangle_rule_3(),
            rule6: triangle_rule_6(),
            close: triangle_rule_collapsed(opts.close_order),
        }
    }

    #[inline]
    fn accumulate(
        acc: &mut PairValues,
        x: &Point,
        lx: &[f64; 3],
        nx: &Point,
        y: &Point,
        ly: &[f64; 3],
        ny: &Point,
        w: f64,
        with_double: bool,
    ) -> bool {
        let d = x - y;
        let r2 = d.norm_squared();
        if !(r2 > 0.0) {
            return false;
        }
        let g = FOUR_PI_INV / r2.sqrt();
        acc.s += w * g;
        if with_double {
            let kxy = w * g * ny.dot(&d) / r2;
            let kyx = -w * g * nx.dot(&d) / r2;
            for k in 0..3 {
                acc.dxy[k] += kxy * ly[k];
                acc.dyx[k] += kyx * lx[k];
            }
        }
        true
    }

    fn singular(&self, tx: &Tri, ty: &Tri, relation: PairRelation, px: [usize; 3], py: [usize; 3]) -> Result<PairValues> {
        let rule = match relation {
            PairRelation::Identical => &self.identical,
            PairRelation::CommonEdge => &self.edge,
            PairRelation::CommonVertex => &self.vertex,
            PairRelation::Disjoint => unreachable!(),
        };
        // the double-layer kernel vanishes on a flat triangle
        let with_double = relation != PairRelation::Identical;
        let scale = 4.0 * tx.area * ty.area;
        let mut acc = PairValues::default();
        for pp in rule {
            let mut lx = [0.0; 3];
            let mut ly = [0.0; 3];
            for r in 0..3 {
                lx[px[r]] = pp.x[r];
                ly[py[r]] = pp.y[r];
            }
            let x = tx.p[0] * lx[0] + tx.p[1] * lx[1] + tx.p[2] * lx[2];
            let y = ty.p[0] * ly[0] + ty.p[1] * ly[1] + ty.p[2] * ly[2];
            if !Self::accumulate(&mut acc, &x, &lx, &tx.normal, &y, &ly, &ty.normal, pp.weight * scale, with_double) {
                return Err(Error::SingularEvaluation);
            }
        }
        Ok(acc)
    }

    fn regular(&self, tx: &Tri, x: &Patch, ty: &Tri, y: &Patch, depth: usize, acc: &mut PairValues) -> Result<()> {
        let (dx, dy) = (x.diameter(), y.diameter());
        let ratio = (x.centroid() - y.centroid()).norm() / dx.max(dy);
        let rule = if ratio >= self.opts.far_ratio {
            &self.rule3
        } else if ratio >= self.opts.near_ratio {
            &self.rule6
        } else if ratio >= self.opts.close_ratio || depth >= self.opts.max_refinement {
            &self.close
        } else {
            if dx >= dy {
                for c in x.children() {
                    self.regular(tx, &c, ty, y, depth + 1, acc)?;
                }
            } else {
                for c in y.children() {
                    self.regular(tx, x, ty, &c, depth + 1, acc)?;
                }
            }
            return Ok(());
        };
        let scale = x.area * y.area;
        for qx in rule {
            let (px, lx) = x.map(&qx.bary);
            for qy in rule {
                let (py, ly) = y.map(&qy.bary);
                let w = qx.weight * qy.weight * scale;
                if !Self::accumulate(acc, &px, &lx, &tx.normal, &py, &ly, &ty.normal, w, true) {
                    return Err(Error::SingularEvaluation);
                }
            }
        }
        Ok(())
    }

    fn pair(&self, tx: &Tri, ty: &Tri, same_surface: bool) -> Result<PairValues> {
        if same_surface {
            let mut shared = Vec::with_capacity(3);
            for (a, va) in tx.idx.iter().enumerate() {
                if let Some(b) = ty.idx.iter().position(|vb| vb == va) {
                    shared.push((a, b));
                }
            }
            match shared.len() {
                3 => {
                    let py = [shared[0].1, shared[1].1, shared[2].1];
                    return self.singular(tx, ty, PairRelation::Identical, [0, 1, 2], py);
                }
                2 => {
                    let (a, b) = (shared[0], shared[1]);
                    let cx = 3 - a.0 - b.0;
                    let cy = 3 - a.1 - b.1;
                    return self.singular(tx, ty, PairRelation::CommonEdge, [a.0, b.0, cx], [a.1, b.1, cy]);
                }
                1 => {
                    let a = shared[0];
                    let px = [a.0, (a.0 + 1) % 3, (a.0 + 2) % 3];
                    let py = [a.1, (a.1 + 1) % 3, (a.1 + 2) % 3];
                    return self.singular(tx, ty, PairRelation::CommonVertex, px, py);
                }
                _ => {}
            }
        }
        let mut acc = PairValues::default();
        self.regular(tx, &Patch::root(tx), ty, &Patch::root(ty), 0, &mut acc)?;
        Ok(acc)
    }
}

/// Raw tables for one ordered surface pair `(i, j)`.
#[derive(Debug, Clone)]
pub struct SurfaceTables {
    pub single: DMatrix<f64>,
    /// `D_ij`.
    pub double: DMatrix<f64>,
    /// `D_ji`; `None` when `i = j`.
    pub double_reverse: Option<DMatrix<f64>>,
}

const ROW_CHUNK: usize = 64;

pub fn surface_tables(target: Surface<'_>, source: Surface<'_>, opts: &QuadratureOptions) -> Result<SurfaceTables> {
    let same = target.index == source.index;
    let ti = triangles(target.mesh)?;
    let tj = triangles(source.mesh)?;
    let (nci, ncj) = (ti.len(), tj.len());
    let integrator = PairIntegrator::new(*opts);
    let mut single = DMatrix::zeros(nci, ncj);
    let mut double = DMatrix::zeros(nci, source.mesh.num_vertices());
    let mut reverse = (!same).then(|| DMatrix::zeros(ncj, target.mesh.num_vertices()));
    let rows: Vec<usize> = (0..nci).collect();
    for chunk in rows.chunks(ROW_CHUNK) {
        let computed: Vec<Result<Vec<PairValues>>> = chunk
            .par_iter()
            .map(|&m| {
                let start = if same { m } else { 0 };
                (start..ncj).map(|n| integrator.pair(&ti[m], &tj[n], same)).collect()
            })
            .collect();
        for (&m, row) in chunk.iter().zip(computed) {
            let start = if same { m } else { 0 };
            for (k, pv) in row?.into_iter().enumerate() {
                let n = start + k;
                single[(m, n)] = pv.s;
                for a in 0..3 {
                    double[(m, tj[n].idx[a])] += pv.dxy[a];
                }
                match reverse.as_mut() {
                    Some(rev) => {
                        for a in 0..3 {
                            rev[(n, ti[m].idx[a])] += pv.dyx[a];
                        }
                    }
                    None if n != m => {
                        single[(n, m)] = pv.s;
                        for a in 0..3 {
                            double[(n, ti[m].idx[a])] += pv.dyx[a];
                        }
                    }
                    None => {}
                }
            }
        }
    }
    Ok(SurfaceTables {
        single,
        double,
        double_reverse: reverse,
    })
}

/// Surface curls `n × ∇λ_a` of the pyramid functions, one triplet list per
/// Cartesian component: `(vertex, triangle, value)`.
fn curl_components(mesh: &TriangleMesh) -> Result<[Vec<(usize, usize, f64)>; 3]> {
    let mut out: [Vec<(usize, usize, f64)>; 3] = Default::default();
    for (t, tri) in triangles(mesh)?.iter().enumerate() {
        for a in 0..3 {
            let e = tri.p[(a + 2) % 3] - tri.p[(a + 1) % 3];
            let curl = -e / (2.0 * tri.area);
            for d in 0..3 {
                out[d].push((tri.idx[a], t, curl[d]));
            }
        }
    }
    Ok(out)
}

/// `W = Σ_d K_d S K_dᵀ` with `K_d[a, τ]` the `d`-th curl component of `λ_a` on `τ`.
pub fn hypersingular_from_single(target: &TriangleMesh, source: &TriangleMesh, single: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ki = curl_components(target)?;
    let kj = curl_components(source)?;
    let (nci, nvi, nvj) = (target.num_triangles(), target.num_vertices(), source.num_vertices());
    let mut w = DMatrix::zeros(nvi, nvj);
    for d in 0..3 {
        // A = S K_jᵀ  (N_c^i × N_v^j)
        let mut a = DMatrix::<f64>::zeros(nci, nvj);
        for &(b, t, v) in &kj[d] {
            let col = single.column(t);
            let mut dst = a.column_mut(b);
            dst.axpy(v, &col, 1.0);
        }
        for b in 0..nvj {
            let col = a.column(b);
            for &(v_a, t, v) in &ki[d] {
                w[(v_a, b)] += v * col[t];
            }
        }
    }
    Ok(w)
}

fn block(tag: OperatorTag, target: Surface<'_>, source: Surface<'_>, matrix: DMatrix<f64>) -> KernelBlock {
    KernelBlock {
        tag,
        target: target.index,
        source: source.index,
        matrix,
    }
}

pub fn assemble_single_layer(target: Surface<'_>, source: Surface<'_>, opts: &QuadratureOptions) -> Result<KernelBlock> {
    let t = surface_tables(target, source, opts)?;
    Ok(block(OperatorTag::SingleLayer, target, source, t.single))
}

pub fn assemble_double_layer(target: Surface<'_>, source: Surface<'_>, opts: &QuadratureOptions) -> Result<KernelBlock> {
    let t = surface_tables(target, source, opts)?;
    Ok(block(OperatorTag::DoubleLayer, target, source, t.double))
}

/// `D*_ij = D_jiᵀ`, pyramids on `target` against patches on `source`.
pub fn assemble_adjoint_double_layer(target: Surface<'_>, source: Surface<'_>, opts: &QuadratureOptions) -> Result<KernelBlock> {
    let t = surface_tables(source, target, opts)?;
    Ok(block(OperatorTag::AdjointDoubleLayer, target, source, t.double.transpose()))
}

/// Positive semi-definite form of the hypersingular operator.
pub fn assemble_hypersingular(target: Surface<'_>, source: Surface<'_>, opts: &QuadratureOptions) -> Result<KernelBlock> {
    let t = surface_tables(target, source, opts)?;
    let w = hypersingular_from_single(target.mesh, source.mesh, &t.single)?;
    Ok(block(OperatorTag::Hypersingular, target, source, w))
}

/// Surface pairs `(i, j)`, `i ≤ j ≤ i + 1`, that interact in the system.
pub fn coupled_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..(i + 2).min(n)).map(move |j| (i, j))).collect()
}

/// Every block between surfaces `i ≤ j` in both directions, from a single
/// pass over the triangle pairs.
pub fn pair_blocks(model: &NestedModel, i: usize, j: usize, opts: &QuadratureOptions) -> Result<Vec<KernelBlock>> {
    let si = Surface { index: i, mesh: &model.surfaces[i] };
    let sj = Surface { index: j, mesh: &model.surfaces[j] };
    let t = surface_tables(si, sj, opts)?;
    let w = hypersingular_from_single(si.mesh, sj.mesh, &t.single)?;
    let mk = |tag, target, source, matrix| KernelBlock { tag, target, source, matrix };
    let mut out = Vec::with_capacity(8);
    if i == j {
        out.push(mk(OperatorTag::AdjointDoubleLayer, i, i, t.double.transpose()));
        out.push(mk(OperatorTag::DoubleLayer, i, i, t.double));
        out.push(mk(OperatorTag::SingleLayer, i, i, t.single));
        out.push(mk(OperatorTag::Hypersingular, i, i, w));
    } else {
        let rev = t.double_reverse.expect("distinct surfaces");
        out.push(mk(OperatorTag::AdjointDoubleLayer, j, i, t.double.transpose()));
        out.push(mk(OperatorTag::AdjointDoubleLayer, i, j, rev.transpose()));
        out.push(mk(OperatorTag::DoubleLayer, i, j, t.double));
        out.push(mk(OperatorTag::DoubleLayer, j, i, rev));
        out.push(mk(OperatorTag::SingleLayer, j, i, t.single.transpose()));
        out.push(mk(OperatorTag::SingleLayer, i, j, t.single));
        out.push(mk(OperatorTag::Hypersingular, j, i, w.transpose()));
        out.push(mk(OperatorTag::Hypersingular, i, j, w));
    }
    Ok(out)
}

/// All blocks a nested model needs: every operator for `|i − j| ≤ 1`.
#[derive(Debug, Clone, Default)]
pub struct OperatorSet {
    blocks: BTreeMap<(OperatorTag, usize, usize), DMatrix<f64>>,
}

impl OperatorSet {
    pub fn assemble(model: &NestedModel, opts: &QuadratureOptions) -> Result<Self> {
        let mut set = OperatorSet::default();
        for (i, j) in coupled_pairs(model.num_surfaces()) {
            for b in pair_blocks(model, i, j, opts)? {
                set.insert(b.tag, b.target, b.source, b.matrix);
            }
        }
        Ok(set)
    }

    pub fn insert(&mut self, tag: OperatorTag, i: usize, j: usize, m: DMatrix<f64>) {
        self.blocks.insert((tag, i, j), m);
    }

    pub fn get(&self, tag: OperatorTag, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        self.blocks.get(&(tag, i, j))
    }

    pub fn blocks(&self) -> impl Iterator<Item = KernelBlock> + '_ {
        self.blocks.iter().map(|(&(tag, target, source), m)| KernelBlock {
            tag,
            target,
            source,
            matrix: m.clone(),
        })
    }

    pub fn from_blocks(blocks: impl IntoIterator<Item = KernelBlock>) -> Self {
        let mut set = OperatorSet::default();
        for b in blocks {
            set.insert(b.tag, b.target, b.source, b.matrix);
        }
        set
    }
}
