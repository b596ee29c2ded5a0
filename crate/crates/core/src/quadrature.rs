//! Gauss rules on intervals and triangles, and the regularizing coordinate
//! transforms for singular triangle-pair integrals.
//!
//! Triangle rules use barycentric coordinates with weights that sum to one
//! (fractions of the triangle area). Pair rules live on `T̂ × T̂` with
//! `T̂ = {(x1, x2) : 0 ≤ x2 ≤ x1 ≤ 1}`, whose vertices `(0,0), (1,0), (1,1)`
//! correspond to the barycentric corners `A, B, C`; their weights sum to
//! `|T̂|² = 1/4`.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n > 0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// Barycentric point `(λ_A, λ_B, λ_C)` with an area-fraction weight.
#[derive(Debug, Clone, Copy)]
pub struct TriPoint {
    pub bary: [f64; 3],
    pub weight: f64,
}

/// Degree-2 rule, 3 points.
pub fn triangle_rule_3() -> Vec<TriPoint> {
    let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
    [[a, b, b], [b, a, b], [b, b, a]]
        .into_iter()
        .map(|bary| TriPoint {
            bary,
            weight: 1.0 / 3.0,
        })
        .collect()
}

/// Degree-4 Dunavant rule, 6 points.
pub fn triangle_rule_6() -> Vec<TriPoint> {
    let mut out = Vec::with_capacity(6);
    for &(a, w) in &[
        (0.445_948_490_915_965, 0.223_381_589_678_011),
        (0.091_576_213_509_771, 0.109_951_743_655_322),
    ] {
        let b = 1.0 - 2.0 * a;
        for bary in [[a, a, b], [a, b, a], [b, a, a]] {
            out.push(TriPoint { bary, weight: w });
        }
    }
    out
}

/// Collapsed tensor Gauss rule with `n²` points, exact to degree `2n − 2`.
pub fn triangle_rule_collapsed(n: usize) -> Vec<TriPoint> {
    let g = gauss_legendre(n);
    let mut out = Vec::with_capacity(n * n);
    for &(u, wu) in &g {
        for &(v, wv) in &g {
            let (x1, x2) = (u, u * v);
            out.push(TriPoint {
                bary: reference_to_bary(x1, x2),
                weight: 2.0 * wu * wv * u,
            });
        }
    }
    out
}

#[inline]
pub fn reference_to_bary(x1: f64, x2: f64) -> [f64; 3] {
    [1.0 - x1, x1 - x2, x2]
}

/// How two triangles of one surface touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairRelation {
    Identical,
    CommonEdge,
    CommonVertex,
    Disjoint,
}

/// A quadrature node on `T̂ × T̂` in barycentric form for both factors.
#[derive(Debug, Clone, Copy)]
pub struct PairPoint {
    pub x: [f64; 3],
    pub y: [f64; 3],
    pub weight: f64,
}

/// Regularized pair rule for a singular relation, built from an `n`-point
/// Gauss rule in each of the four transformed coordinates `(ξ, η1, η2, η3)`.
///
/// For `CommonEdge` the shared edge must be `A→B` in both factors; for
/// `CommonVertex` the shared vertex must be `A` in both.
pub fn singular_pair_rule(relation: PairRelation, n: usize) -> Vec<PairPoint> {
    let g = gauss_legendre(n);
    let mut out = Vec::new();
    let mut push = |x: (f64, f64), y: (f64, f64), w: f64| {
        out.push(PairPoint {
            x: reference_to_bary(x.0, x.1),
            y: reference_to_bary(y.0, y.1),
            weight: w,
        })
    };
    for &(xi, wxi) in &g {
        for &(e1, w1) in &g {
            for &(e2, w2) in &g {
                for &(e3, w3) in &g {
                    let w = wxi * w1 * w2 * w3;
                    match relation {
                        PairRelation::Identical => {
                            let w = w * xi.powi(3) * e1 * e1 * e2;
                            let a = (xi, xi * (1.0 - e1 + e1 * e2));
                            let b = (xi * (1.0 - e1 * e2 * e3), xi * (1.0 - e1));
                            push(a, b, w);
                            push(b, a, w);
                            let a = (xi, xi * e1 * (1.0 - e2 + e2 * e3));
                            let b = (xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2));
                            push(a, b, w);
                            push(b, a, w);
                            let a = (xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3));
                            let b = (xi, xi * e1 * (1.0 - e2));
                            push(a, b, w);
                            push(b, a, w);
                        }
                        PairRelation::CommonEdge => {
                            let w0 = w * xi.powi(3) * e1 * e1;
                            push(
                                (xi, xi * e1 * e3),
                                (xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)),
                                w0,
                            );
                            let w1 = w0 * e2;
                            push(
                                (xi, xi * e1),
                                (xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * (1.0 - e3)),
                                w1,
                            );
                            push(
                                (xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)),
                                (xi, xi * e1 * e2 * e3),
                                w1,
                            );
                            push(
                                (xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * (1.0 - e3)),
                                (xi, xi * e1),
                                w1,
                            );
                            push(
                                (xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3)),
                                (xi, xi * e1 * e2),
                                w1,
                            );
                        }
                        PairRelation::CommonVertex => {
                            let w = w * xi.powi(3) * e2;
                            push((xi, xi * e1), (xi * e2, xi * e2 * e3), w);
                            push((xi * e2, xi * e2 * e3), (xi, xi * e1), w);
                        }
                        PairRelation::Disjoint => {
                            unreachable!("regular pairs use product triangle rules")
                        }
                    }
                }
            }
        }
    }
    out
}
