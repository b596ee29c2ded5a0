//! Closed-form and series references: unbounded dipole, layered spheres,
//! spherical harmonics and the spectra of the boundary operators on a sphere.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Relative size of the last retained term at which the series stops.
pub const SERIES_TOLERANCE: f64 = 1e-10;
pub const MAX_DEGREE: usize = 4000;

/// Potential of a current dipole `q` at `r0` in an unbounded medium of
/// conductivity `sigma`.
pub fn dipole_unbounded(r: &Point, r0: &Point, q: &Point, sigma: f64) -> f64 {
    let d = r - r0;
    let dist = d.norm();
    q.dot(&d) / (4.0 * PI * sigma * dist * dist * dist)
}

/// Gradient of [`dipole_unbounded`] with respect to `r`.
pub fn dipole_unbounded_gradient(r: &Point, r0: &Point, q: &Point, sigma: f64) -> Point {
    let d = r - r0;
    let dist2 = d.norm_squared();
    let dist = dist2.sqrt();
    (q / dist.powi(3) - d * (3.0 * q.dot(&d) / (dist2 * dist * dist2))) / (4.0 * PI * sigma)
}

/// Concentric spheres; `radii` inner to outer, `conductivities[k]` inside
/// `radii[k]`, insulating exterior.
#[derive(Debug, Clone)]
pub struct SphereSpec {
    pub radii: Vec<f64>,
    pub conductivities: Vec<f64>,
}

impl SphereSpec {
    pub fn new(radii: Vec<f64>, conductivities: Vec<f64>) -> Result<Self> {
        if radii.is_empty() || radii.len() != conductivities.len() {
            return Err(Error::InvalidModel(format!(
                "{} radii and {} conductivities",
                radii.len(),
                conductivities.len()
            )));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= 0.0 {
            return Err(Error::InvalidModel("radii must increase from a positive value".into()));
        }
        if let Some(&s) = conductivities.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::NonPositive {
                what: "conductivity",
                value: s,
            });
        }
        Ok(Self {
            radii,
            conductivities,
        })
    }

    pub fn outer_radius(&self) -> f64 {
        *self.radii.last().unwrap()
    }
}

/// Legendre polynomials and their derivatives up to degree `lmax`.
pub fn legendre(lmax: usize, u: f64) -> (Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; lmax + 1];
    let mut dp = vec![0.0; lmax + 1];
    p[0] = 1.0;
    if lmax >= 1 {
        p[1] = u;
        dp[1] = 1.0;
    }
    for n in 1..lmax {
        let nf = n as f64;
        p[n + 1] = ((2.0 * nf + 1.0) * u * p[n] - nf * p[n - 1]) / (nf + 1.0);
        dp[n + 1] = dp[n - 1] + (2.0 * nf + 1.0) * p[n];
    }
    (p, dp)
}

/// Radial factor at the outer surface for degree `l`, with the source term
/// normalised to `r^{-(l+1)}` coefficient `|r0|^{l-1}`.
fn radial_factor(spec: &SphereSpec, l: usize, r0: f64) -> Result<f64> {
    let n = spec.radii.len();
    let lf = l as f64;
    let source = |r: f64| r0.powi(l as i32 - 1) / r.powi(l as i32 + 1);
    // unknowns: a_1, then (a_k, b_k) for k = 2..n
    let dim = 2 * n - 1;
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let a_col = |k: usize| if k == 0 { 0 } else { 2 * k - 1 };
    let b_col = |k: usize| 2 * k;
    // layer k basis: (r/R_k)^l and, for k ≥ 1, (R_{k-1}/r)^{l+1}
    let grow = |k: usize, r: f64| (r / spec.radii[k]).powi(l as i32);
    let decay = |k: usize, r: f64| (spec.radii[k - 1] / r).powi(l as i32 + 1);
    for k in 0..n - 1 {
        let r = spec.radii[k];
        let (row_v, row_j) = (2 * k, 2 * k + 1);
        let (sl, sr) = (spec.conductivities[k], spec.conductivities[k + 1]);
        // inner side
        m[(row_v, a_col(k))] += grow(k, r);
        m[(row_j, a_col(k))] += sl * lf * grow(k, r) / r;
        if k == 0 {
            rhs[row_v] -= source(r);
            rhs[row_j] -= sl * (-(lf + 1.0)) * source(r) / r;
        } else {
            m[(row_v, b_col(k))] += decay(k, r);
            m[(row_j, b_col(k))] += sl * (-(lf + 1.0)) * decay(k, r) / r;
        }
        // outer side
        m[(row_v, a_col(k + 1))] -= grow(k + 1, r);
        m[(row_v, b_col(k + 1))] -= decay(k + 1, r);
        m[(row_j, a_col(k + 1))] -= sr * lf * grow(k + 1, r) / r;
        m[(row_j, b_col(k + 1))] -= sr * (-(lf + 1.0)) * decay(k + 1, r) / r;
    }
    let last = n - 1;
    let r = spec.radii[last];
    let row = dim - 1;
    m[(row, a_col(last))] = lf * grow(last, r) / r;
    if last == 0 {
        rhs[row] = (lf + 1.0) * source(r) / r;
    } else {
        m[(row, b_col(last))] = -(lf + 1.0) * decay(last, r) / r;
    }
    let x = m.lu().solve(&rhs).ok_or(Error::SingularEvaluation)?;
    let mut value = x[a_col(last)] * grow(last, r);
    if last == 0 {
        value += source(r);
    } else {
        value += x[b_col(last)] * decay(last, r);
    }
    Ok(value)
}

/// Potential on the outer sphere of a layered-sphere model due to a dipole
/// in the innermost compartment, by Legendre series. Points are projected
/// radially onto the outer sphere.
pub fn layered_sphere_potential(
    spec: &SphereSpec,
    r0: &Point,
    q: &Point,
    points: &[Point],
) -> Result<Vec<f64>> {
    let rho = r0.norm();
    if rho >= spec.radii[0] {
        return Err(Error::SourceOnInterface(r0.x, r0.y, r0.z));
    }
    let r0_hat = if rho > 0.0 { r0 / rho } else { Point::zeros() };
    let qr0 = q.dot(&r0_hat);
    let dirs: Vec<Point> = points.iter().map(|p| p.normalize()).collect();
    let mut values = vec![0.0; points.len()];
    let prefactor = 1.0 / (4.0 * PI * spec.conductivities[0]);
    let mut quiet = 0;
    let mut legendre_cache: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut lmax_cached = 0;
    for l in 1..=MAX_DEGREE {
        if l > lmax_cached {
            lmax_cached = (2 * lmax_cached).max(64).min(MAX_DEGREE);
            legendre_cache = dirs
                .iter()
                .map(|d| legendre(lmax_cached, d.dot(&r0_hat).clamp(-1.0, 1.0)))
                .collect();
        }
        let f = radial_factor(spec, l, rho)?;
        let lf = l as f64;
        let mut largest_term = 0.0f64;
        let mut largest_value = 0.0f64;
        for (i, d) in dirs.iter().enumerate() {
            let (p, dp) = &legendre_cache[i];
            let u = d.dot(&r0_hat);
            let g = lf * p[l] * qr0 + dp[l] * (q.dot(d) - u * qr0);
            let term = prefactor * g * f;
            values[i] += term;
            largest_term = largest_term.max(term.abs());
            largest_value = largest_value.max(values[i].abs());
        }
        if largest_term <= SERIES_TOLERANCE * largest_value || largest_value == 0.0 && l > 1 {
            quiet += 1;
            // a dipole at the centre has only the degree-one term
            if quiet >= 3 || rho == 0.0 {
                return Ok(values);
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::SeriesNotConverged(MAX_DEGREE))
}

/// Closed-form surface potential of a dipole inside a homogeneous sphere
/// of radius `radius` centred at the origin.
pub fn single_sphere_potential(radius: f64, sigma: f64, r0: &Point, q: &Point, r: &Point) -> f64 {
    let r_hat = r.normalize();
    let w = r0 / radius;
    let d = r_hat - w;
    let rho = d.norm();
    let s = w.dot(&r_hat);
    let field = d * (2.0 / rho.powi(3)) + (r_hat + d / rho) / (1.0 - s + rho);
    q.dot(&field) / (4.0 * PI * sigma * radius * radius)
}

/// Real orthonormal spherical harmonics of degree `l`, `m = −l..=l`, at a
/// direction.
pub fn real_spherical_harmonics(l: usize, dir: &Point) -> Vec<f64> {
    let d = dir.normalize();
    let ct = d.z.clamp(-1.0, 1.0);
    let st = (1.0 - ct * ct).max(0.0).sqrt();
    let phi = d.y.atan2(d.x);
    let mut out = vec![0.0; 2 * l + 1];
    for m in 0..=l {
        let plm = associated_legendre(l, m, ct, st);
        let mut norm = ((2 * l + 1) as f64 / (4.0 * PI)).sqrt();
        // (l−m)!/(l+m)!
        for k in (l - m + 1)..=(l + m) {
            norm /= (k as f64).sqrt();
        }
        if m == 0 {
            out[l] = norm * plm;
        } else {
            let c = 2f64.sqrt() * norm * plm;
            out[l + m] = c * (m as f64 * phi).cos();
            out[l - m] = c * (m as f64 * phi).sin();
        }
    }
    out
}

fn associated_legendre(l: usize, m: usize, ct: f64, st: f64) -> f64 {
    let mut pmm = 1.0;
    for k in 1..=m {
        pmm *= (2 * k - 1) as f64 * st;
    }
    if l == m {
        return pmm;
    }
    let mut pm1 = ct * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pm1;
    }
    let mut pm2 = pmm;
    for n in (m + 2)..=l {
        let p = ((2 * n - 1) as f64 * ct * pm1 - (n + m - 1) as f64 * pm2) / (n - m) as f64;
        pm2 = pm1;
        pm1 = p;
    }
    pm1
}

/// Samples of all degree-`l` harmonics at `points`, one column per order.
pub fn harmonic_samples(points: &[Point], l: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(points.len(), 2 * l + 1);
    for (i, p) in points.iter().enumerate() {
        for (j, y) in real_spherical_harmonics(l, p).into_iter().enumerate() {
            q[(i, j)] = y;
        }
    }
    q
}

/// Mean generalized Rayleigh quotient of `a` against `gram` over the span
/// of `samples`: `trace((QᵀGQ)⁻¹ QᵀAQ) / cols`.
pub fn sphere_operator_eigenvalue(a: &DMatrix<f64>, gram: &DMatrix<f64>, samples: &DMatrix<f64>) -> Result<f64> {
    let qa = samples.transpose() * a * samples;
    let qg = samples.transpose() * gram * samples;
    let solved = qg.lu().solve(&qa).ok_or(Error::SingularEvaluation)?;
    Ok(solved.trace() / samples.ncols() as f64)
}

/// Eigenvalues of the unit-sphere operators at degree `l`.
pub mod sphere_spectrum {
    pub fn single_layer(l: usize) -> f64 {
        1.0 / (2 * l + 1) as f64
    }

    /// Principal-value double layer with the outward normal.
    pub fn double_layer(l: usize) -> f64 {
        -0.5 / (2 * l + 1) as f64
    }

    /// Positive hypersingular form `⟨−∂_n𝒟 u, u⟩`.
    pub fn hypersingular(l: usize) -> f64 {
        (l * (l + 1)) as f64 / (2 * l + 1) as f64
    }

    pub fn laplace_beltrami(l: usize) -> f64 {
        (l * (l + 1)) as f64
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}
