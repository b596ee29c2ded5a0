//! Closed triangle surfaces, nested compartment models and sphere meshes.

use std::collections::HashMap;
use std::fmt;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub mod off;

pub type Point = Vector3<f64>;

/// Upper bound on icosphere refinement (20·4^7 ≈ 330k triangles).
pub const MAX_SUBDIVISIONS: usize = 7;

/// Indexed triangle surface. Triangles are wound counter-clockwise when seen
/// from outside, so the right-hand-rule normal points outward.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
}

/// A defect reported by [`TriangleMesh::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    IndexOutOfRange { triangle: usize },
    Degenerate { triangle: usize },
    /// Edge used by a single triangle.
    OpenEdge { edge: (usize, usize) },
    /// Edge shared by more than two triangles.
    NonManifoldEdge { edge: (usize, usize), count: usize },
    /// Triangle whose winding disagrees with the majority of its neighbours.
    Orientation { triangle: usize },
    Disconnected { components: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IndexOutOfRange { triangle } => {
                write!(f, "triangle {triangle} references a missing vertex")
            }
            Violation::Degenerate { triangle } => write!(f, "triangle {triangle} has zero area"),
            Violation::OpenEdge { edge } => write!(f, "edge {}-{} is open", edge.0, edge.1),
            Violation::NonManifoldEdge { edge, count } => {
                write!(f, "edge {}-{} is shared by {count} triangles", edge.0, edge.1)
            }
            Violation::Orientation { triangle } => {
                write!(f, "triangle {triangle} is inconsistently oriented")
            }
            Violation::Disconnected { components } => {
                write!(f, "surface has {components} connected components")
            }
        }
    }
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Self {
        Self {
            vertices,
            triangles,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Non-normalised normal, twice the area in length.
    pub fn area_vector(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self, t: usize) -> f64 {
        0.5 * self.area_vector(t).norm()
    }

    pub fn areas(&self) -> Vec<f64> {
        (0..self.num_triangles()).map(|t| self.area(t)).collect()
    }

    pub fn normal(&self, t: usize) -> Point {
        self.area_vector(t).normalize()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        (a + b + c) / 3.0
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.area(t)).sum()
    }

    /// Sum of signed tetrahedron volumes against the origin; the enclosed
    /// volume for a closed outward-oriented surface.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0
            })
            .sum()
    }

    /// Unique undirected edges as `(min, max)` vertex pairs, in first-seen order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut seen = HashMap::new();
        let mut edges = Vec::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if seen.insert(key, ()).is_none() {
                    edges.push(key);
                }
            }
        }
        edges
    }

    /// Arithmetic mean of the unique edge lengths.
    pub fn average_edge_length(&self) -> f64 {
        let edges = self.edges();
        let total: f64 = edges
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .sum();
        total / edges.len() as f64
    }

    /// Largest edge length of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        (a - b).norm().max((b - c).norm()).max((c - a).norm())
    }

    /// For every vertex, the triangles incident to it.
    pub fn vertex_triangles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_vertices()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                out[v].push(t);
            }
        }
        out
    }

    /// Lists every violated surface invariant; empty for a closed, consistently
    /// oriented, connected 2-manifold without degenerate triangles.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        let nv = self.num_vertices();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                violations.push(Violation::IndexOutOfRange { triangle: t });
            }
        }
        if !violations.is_empty() {
            return violations;
        }
        let scale = self
            .edges()
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .fold(0.0, f64::max);
        for t in 0..self.num_triangles() {
            let [a, b, c] = self.triangles[t];
            if a == b || b == c || c == a || self.area(t) <= 1e-14 * scale * scale {
                violations.push(Violation::Degenerate { triangle: t });
            }
        }

        // directed edge -> triangles traversing it
        let mut directed: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
        let mut order = Vec::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                directed.entry((a, b)).or_default().push(t);
                let key = (a.min(b), a.max(b));
                let count = undirected.entry(key).or_insert(0);
                if *count == 0 {
                    order.push(key);
                }
                *count += 1;
            }
        }
        for key in &order {
            match undirected[key] {
                1 => violations.push(Violation::OpenEdge { edge: *key }),
                2 => {}
                n => violations.push(Violation::NonManifoldEdge {
                    edge: *key,
                    count: n,
                }),
            }
        }

        let mut conflicts = vec![0usize; self.num_triangles()];
        for tri_list in directed.values() {
            if tri_list.len() > 1 {
                for &t in tri_list {
                    conflicts[t] += 1;
                }
            }
        }
        for (t, &c) in conflicts.iter().enumerate() {
            if c >= 2 {
                violations.push(Violation::Orientation { triangle: t });
            }
        }

        let components = self.connected_components();
        if components > 1 {
            violations.push(Violation::Disconnected { components });
        }
        violations
    }

    /// Number of edge-connected triangle components.
    pub fn connected_components(&self) -> usize {
        let n = self.num_triangles();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let mut first: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if let Some(&other) = first.get(&key) {
                    let (ra, rb) = (find(&mut parent, t), find(&mut parent, other));
                    if ra != rb {
                        parent[ra] = rb;
                    }
                } else {
                    first.insert(key, t);
                }
            }
        }
        (0..n).filter(|&i| find(&mut parent, i) == i).count()
    }

    /// Generalised winding number of the surface around `p`: 1 inside, 0 outside
    /// for a closed outward-oriented surface.
    pub fn winding_number(&self, p: &Point) -> f64 {
        let total: f64 = self
            .triangles
            .iter()
            .map(|&[a, b, c]| solid_angle(&(self.vertices[a] - p), &(self.vertices[b] - p), &(self.vertices[c] - p)))
            .sum();
        total / (4.0 * std::f64::consts::PI)
    }

    /// Centroid of the vertices and the largest distance from it.
    pub fn bounding_sphere(&self) -> (Point, f64) {
        let center =
            self.vertices.iter().fold(Point::zeros(), |acc, v| acc + v) / self.num_vertices() as f64;
        let radius = self
            .vertices
            .iter()
            .map(|v| (v - center).norm())
            .fold(0.0, f64::max);
        (center, radius)
    }

    /// Smallest distance from `p` to any vertex (a cheap proximity bound).
    pub fn min_vertex_distance(&self, p: &Point) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v - p).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Euclidean distance from `p` to the surface.
    pub fn distance(&self, p: &Point) -> f64 {
        (0..self.num_triangles())
            .map(|t| point_triangle_distance(p, &self.corners(t)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Stable FNV-1a hash of coordinates and connectivity.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.vertices.len() as u64);
        for v in &self.vertices {
            for k in 0..3 {
                eat(v[k].to_bits());
            }
        }
        for t in &self.triangles {
            for &i in t {
                eat(i as u64);
            }
        }
        h
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(
            self.vertices.iter().map(|v| v * factor).collect(),
            self.triangles.clone(),
        )
    }
}

/// Signed solid angle subtended by the triangle `(a, b, c)` (given relative to
/// the observation point), positive when the observer sees it counter-clockwise
/// from below, i.e. lies on the inner side of its outward normal.
pub fn solid_angle(a: &Point, b: &Point, c: &Point) -> f64 {
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&b.cross(c));
    let den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    2.0 * num.atan2(den)
}

pub fn point_triangle_distance(p: &Point, tri: &[Point; 3]) -> f64 {
    // Ericson, closest point on triangle
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}

/// Geodesic sphere: a regular icosahedron refined `subdivisions` times by edge
/// midpoint splitting, every vertex projected onto the sphere of `radius`.
pub fn make_icosphere(subdivisions: usize, radius: f64) -> Result<TriangleMesh> {
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(Error::SubdivisionTooLarge(subdivisions));
    }
    if !(radius > 0.0) {
        return Err(Error::NonPositive {
            what: "sphere radius",
            value: radius,
        });
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let mut vertices: Vec<Point> = raw
        .iter()
        .map(|&(x, y, z)| Point::new(x, y, z).normalize())
        .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for tri in triangles.iter_mut() {
        let [a, b, c] = tri.map(|i| vertices[i]);
        if (b - a).cross(&(c - a)).dot(&(a + b + c)) < 0.0 {
            tri.swap(1, 2);
        }
    }
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        triangles = next;
    }
    for v in vertices.iter_mut() {
        *v *= radius;
    }
    Ok(TriangleMesh::new(vertices, triangles))
}

/// Nested closed surfaces `Γ_1 ⊂ … ⊂ Γ_N` with compartment conductivities
/// `σ_1 … σ_{N+1}`; `σ_{N+1}` is the exterior and may be zero.
#[derive(Debug, Clone)]
pub struct NestedModel {
    pub surfaces: Vec<TriangleMesh>,
    pub conductivities: Vec<f64>,
}

impl NestedModel {
    /// Checks every surface invariant, the conductivities, and strict nesting.
    pub fn new(surfaces: Vec<TriangleMesh>, conductivities: Vec<f64>) -> Result<Self> {
        if surfaces.is_empty() {
            return Err(Error::InvalidModel("no surfaces".into()));
        }
        if conductivities.len() != surfaces.len() + 1 {
            return Err(Error::InvalidModel(format!(
                "{} surfaces need {} conductivities, got {}",
                surfaces.len(),
                surfaces.len() + 1,
                conductivities.len()
            )));
        }
        let n = surfaces.len();
        for (i, &s) in conductivities.iter().enumerate() {
            let ok = if i < n { s > 0.0 } else { s >= 0.0 };
            if !ok || !s.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "conductivity {} = {s} is not admissible",
                    i + 1
                )));
            }
        }
        for (i, mesh) in surfaces.iter().enumerate() {
            let violations = mesh.validate();
            if let Some(v) = violations.first() {
                return Err(Error::InvalidMesh(format!(
                    "surface {}: {v} ({} violations)",
                    i + 1,
                    violations.len()
                )));
            }
            if mesh.signed_volume() <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "surface {} is oriented inward",
                    i + 1
                )));
            }
        }
        for i in 0..n.saturating_sub(1) {
            let (co, ro) = surfaces[i + 1].bounding_sphere();
            let reach = surfaces[i]
                .vertices
                .iter()
                .map(|v| (v - co).norm())
                .fold(0.0, f64::max);
            if reach > ro {
                return Err(Error::InvalidModel(format!(
                    "surface {} is not inside surface {}",
                    i + 1,
                    i + 2
                )));
            }
            let stride = (surfaces[i].num_vertices() / 64).max(1);
            for v in surfaces[i].vertices.iter().step_by(stride) {
                if (surfaces[i + 1].winding_number(v) - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidModel(format!(
                        "surface {} is not strictly inside surface {}",
                        i + 1,
                        i + 2
                    )));
                }
            }
        }
        Ok(Self {
            surfaces,
            conductivities,
        })
    }

    /// Concentric icospheres of the given radii (innermost first).
    pub fn concentric_spheres(
        subdivisions: usize,
        radii: &[f64],
        conductivities: Vec<f64>,
    ) -> Result<Self> {
        let surfaces = radii
            .iter()
            .map(|&r| make_icosphere(subdivisions, r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(surfaces, conductivities)
    }

    pub fn num_surfaces(&self) -> usize {
        self.surfaces.len()
    }

    /// Whether the outermost flux unknown is eliminated (insulating exterior).
    pub fn insulated(&self) -> bool {
        *self.conductivities.last().unwrap() == 0.0
    }

    /// Zero-based compartment index containing `p` (`num_surfaces()` = exterior).
    pub fn compartment_of(&self, p: &Point) -> usize {
        self.surfaces
            .iter()
            .position(|s| s.winding_number(p) > 0.5)
            .unwrap_or(self.surfaces.len())
    }
}
