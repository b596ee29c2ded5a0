use super::*;
use crate::bem_ops::QuadratureOptions;
use crate::oracle::{layered_sphere_potential, single_sphere_potential, SphereSpec};

fn model(subdivisions: usize, radii: &[f64], sigma: Vec<f64>) -> (NestedModel, OperatorSet) {
    let m = NestedModel::concentric_spheres(subdivisions, radii, sigma).unwrap();
    let ops = OperatorSet::assemble(&m, &QuadratureOptions::default()).unwrap();
    (m, ops)
}

fn rel_error_mean_free(x: &[f64], reference: &[f64]) -> f64 {
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let mr = reference.iter().sum::<f64>() / reference.len() as f64;
    let num: f64 = x.iter().zip(reference).map(|(a, b)| ((a - mx) - (b - mr)).powi(2)).sum();
    let den: f64 = reference.iter().map(|b| (b - mr).powi(2)).sum();
    (num / den).sqrt()
}

#[test]
fn parses_sources() {
    let s = parse_sources("# header\n0 0 0.5  0 0 1\n\n0.1 0.2 0.3 1 2 3 # tail\n").unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[1].moment, Point::new(1.0, 2.0, 3.0));
    assert!(parse_sources("1 2 3 4 5").is_err());
    assert!(parse_sources("1 2 3 4 5 x").is_err());
}

#[test]
fn layout_drops_outer_flux_when_insulated() {
    let m = NestedModel::concentric_spheres(1, &[0.5, 1.0], vec![1.0, 2.0, 0.0]).unwrap();
    let l = Layout::for_model(&m);
    assert_eq!(l.blocks.len(), 3);
    assert_eq!(l.dim, 42 + 80 + 42);
    assert!(l.flux(1).is_none());
    let open = NestedModel::concentric_spheres(1, &[0.5, 1.0], vec![1.0, 2.0, 0.5]).unwrap();
    assert_eq!(Layout::for_model(&open).dim, 2 * (42 + 80));
}

#[test]
fn system_is_symmetric_with_approximate_gauge_kernel() {
    let (m, ops) = model(2, &[0.8, 0.9, 1.0], vec![1.0, 1.0 / 80.0, 1.0, 0.0]);
    let sys = assemble_system(&m, &ops).unwrap();
    assert_eq!((&sys.matrix - sys.matrix.transpose()).amax(), 0.0);
    let k = sys.kernel().unwrap();
    let zk = &sys.matrix * &k;
    assert!(zk.norm() < 1e-2 * sys.matrix.norm() * k.norm() / (sys.dim() as f64).sqrt());
}

#[test]
fn rhs_is_linear_and_vanishes_without_sources() {
    let (m, ops) = model(1, &[0.8, 1.0], vec![1.0, 0.5, 0.0]);
    let sys = assemble_system(&m, &ops).unwrap();
    let zero = assemble_rhs(&m, &sys, &[DipoleSource::new(Point::new(0.1, 0.0, 0.2), Point::zeros())]).unwrap();
    assert_eq!(zero.amax(), 0.0);
    let p = Point::new(0.1, 0.0, 0.2);
    let a = assemble_rhs(&m, &sys, &[DipoleSource::new(p, Point::new(1.0, 0.0, 0.0))]).unwrap();
    let b = assemble_rhs(&m, &sys, &[DipoleSource::new(p, Point::new(0.0, 0.0, 1.0))]).unwrap();
    let ab = assemble_rhs(&m, &sys, &[DipoleSource::new(p, Point::new(2.0, 0.0, -3.0))]).unwrap();
    assert!((&ab - (&a * 2.0 - &b * 3.0)).amax() < 1e-14 * ab.amax());
}

#[test]
fn rejects_sources_on_interfaces_and_outside() {
    let (m, ops) = model(1, &[0.8, 1.0], vec![1.0, 0.5, 0.0]);
    let sys = assemble_system(&m, &ops).unwrap();
    let on = m.surfaces[0].vertices[3];
    let r = assemble_rhs(&m, &sys, &[DipoleSource::new(on, Point::z())]);
    assert!(matches!(r, Err(Error::SourceOnInterface(..))));
    let r = assemble_rhs(&m, &sys, &[DipoleSource::new(Point::new(0.0, 0.0, 2.0), Point::z())]);
    assert!(matches!(r, Err(Error::InvalidModel(_))));
}

#[test]
fn single_sphere_matches_closed_form() {
    let (m, ops) = model(3, &[1.0], vec![1.0, 0.0]);
    let mut sys = assemble_system(&m, &ops).unwrap();
    let src = DipoleSource::new(Point::new(0.0, 0.2, 0.3), Point::new(0.3, 0.0, 1.0));
    sys.rhs = assemble_rhs(&m, &sys, &[src]).unwrap();
    let x = sys.solve_direct().unwrap();
    let v: Vec<f64> = sys.potential(&x, 0).iter().copied().collect();
    let exact: Vec<f64> = m.surfaces[0]
        .vertices
        .iter()
        .map(|p| single_sphere_potential(1.0, 1.0, &src.position, &src.moment, p))
        .collect();
    let err = rel_error_mean_free(&v, &exact);
    assert!(err < 0.03, "relative error {err}");
}

#[test]
fn three_layer_sphere_matches_series_and_rescaling_is_transparent() {
    let sigma = vec![1.0, 1.0 / 80.0, 1.0, 0.0];
    let (m, ops) = model(2, &[0.8, 0.9, 1.0], sigma.clone());
    let mut sys = assemble_system(&m, &ops).unwrap();
    let src = DipoleSource::new(Point::new(0.0, 0.0, 0.6), Point::new(0.0, 0.0, 1.0));
    sys.rhs = assemble_rhs(&m, &sys, &[src]).unwrap();
    let x = sys.solve_direct().unwrap();
    let spec = SphereSpec::new(vec![0.8, 0.9, 1.0], sigma[..3].to_vec()).unwrap();
    let exact = layered_sphere_potential(&spec, &src.position, &src.moment, &m.surfaces[2].vertices).unwrap();
    let v: Vec<f64> = sys.potential(&x, 2).iter().copied().collect();
    let err = rel_error_mean_free(&v, &exact);
    assert!(err < 0.1, "relative error {err}");

    let mut scaled = sys.clone();
    conductivity_rescale(&m, &mut scaled);
    let xs = scaled.solve_direct().unwrap();
    // the discrete gauge kernel is only approximate, so the regularised
    // solutions agree to the level of ‖Z k‖ rather than to rounding
    assert!((&xs - &x).norm() / x.norm() < 1e-3);
    let rhs = assemble_rhs(&m, &scaled, &[src]).unwrap();
    assert!((&rhs - &scaled.rhs).amax() < 1e-15 * rhs.amax());
}

#[test]
fn non_insulated_exterior_is_solvable() {
    let (m, ops) = model(2, &[1.0], vec![1.0, 0.5]);
    let mut sys = assemble_system(&m, &ops).unwrap();
    assert!(sys.kernel().is_none());
    sys.rhs = assemble_rhs(&m, &sys, &[DipoleSource::new(Point::new(0.0, 0.0, 0.3), Point::z())]).unwrap();
    let x = sys.solve_direct().unwrap();
    assert!((&sys.matrix * &x - &sys.rhs).norm() < 1e-8 * sys.rhs.norm());
}

#[test]
fn homogeneous_rescaling_is_uniform_and_invisible() {
    let (m, ops) = model(1, &[1.0], vec![1.0, 1.0]);
    let mut sys = assemble_system(&m, &ops).unwrap();
    sys.rhs = assemble_rhs(&m, &sys, &[DipoleSource::new(Point::new(0.1, 0.0, 0.4), Point::x())]).unwrap();
    let x = sys.solve_direct().unwrap();
    let mut scaled = sys.clone();
    conductivity_rescale(&m, &mut scaled);
    assert!(scaled.scaling.iter().all(|s| (s - 0.5f64.sqrt()).abs() < 1e-15));
    assert!((&scaled.matrix - &sys.matrix * 0.5).amax() < 1e-15 * sys.matrix.amax());
    let xs = scaled.solve_direct().unwrap();
    assert!((&xs - &x).norm() < 1e-12 * x.norm());
}

#[test]
fn rescaling_improves_conditioning() {
    let (m, ops) = model(2, &[0.8, 0.9, 1.0], vec![1.0, 1.0 / 80.0, 1.0, 0.0]);
    let mut sys = assemble_system(&m, &ops).unwrap();
    let before = crate::precond::unpreconditioned_condition(&sys).unwrap().cond;
    conductivity_rescale(&m, &mut sys);
    let after = crate::precond::unpreconditioned_condition(&sys).unwrap().cond;
    assert!(after < 0.5 * before, "{after} vs {before}");
}
