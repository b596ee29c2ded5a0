use super::*;
use crate::bem_ops::{OperatorSet, OperatorTag, QuadratureOptions};
use crate::formulation::{assemble_rhs, assemble_system, conductivity_rescale, DipoleSource};
use crate::geometry::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use crate::laplacians::{dual_laplacian, pinv_apply};
use crate::spaces::mixed_gram_dual;

fn three_sphere(subdivisions: usize) -> (NestedModel, BlockSystem) {
    let model = NestedModel::concentric_spheres(subdivisions, &[0.8, 0.9, 1.0], vec![1.0, 1.0 / 80.0, 1.0, 0.0]).unwrap();
    let ops = OperatorSet::assemble(&model, &QuadratureOptions::default()).unwrap();
    let mut sys = assemble_system(&model, &ops).unwrap();
    let src = DipoleSource::new(Point::new(0.0, 0.0, 0.6), Point::new(0.0, 0.0, 1.0));
    sys.rhs = assemble_rhs(&model, &sys, &[src]).unwrap();
    conductivity_rescale(&model, &mut sys);
    (model, sys)
}

fn random(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5)
}

#[test]
fn zero_and_kernel_map_to_zero() {
    let (model, sys) = three_sphere(1);
    let op = PrecondOperator::build(&sys, &model).unwrap();
    assert_eq!(op.apply(&DVector::zeros(sys.dim())).unwrap().norm(), 0.0);
    let u = op.deflation_basis().unwrap().clone();
    let au = op.apply(&u).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scale = op.apply(&random(sys.dim(), &mut rng)).unwrap().norm();
    assert!(au.norm() < 1e-12 * scale);
    let (x, _) = op.recover_solution(&DVector::zeros(sys.dim()));
    assert_eq!(x.norm(), 0.0);
}

#[test]
fn symmetric_linear_and_positive() {
    let (model, sys) = three_sphere(1);
    let op = PrecondOperator::build(&sys, &model).unwrap();
    let n = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let norm = op.condition().unwrap().lambda_max;
    for _ in 0..5 {
        let (x, y) = (random(n, &mut rng), random(n, &mut rng));
        let (ax, ay) = (op.apply(&x).unwrap(), op.apply(&y).unwrap());
        assert!((ax.dot(&y) - x.dot(&ay)).abs() <= 1e-10 * norm * x.norm() * y.norm());
        let scaled = op.apply(&(&x * 3.5)).unwrap();
        assert!((&scaled - &ax * 3.5).norm() <= 1e-12 * scaled.norm());
    }
    for _ in 0..100 {
        let x = random(n, &mut rng);
        assert!(x.dot(&op.apply(&x).unwrap()) >= -1e-12 * norm * x.norm_squared());
    }
}

#[test]
fn matches_dense_sandwich_on_one_sphere() {
    let model = NestedModel::concentric_spheres(1, &[1.0], vec![1.0, 0.5]).unwrap();
    let mesh = &model.surfaces[0];
    let ops = OperatorSet::assemble(&model, &QuadratureOptions::default()).unwrap();
    let sys = assemble_system(&model, &ops).unwrap();
    let op = PrecondOperator::build(&sys, &model).unwrap();
    assert!(op.deflation_basis().is_none());
    let (nv, nc) = (mesh.num_vertices(), mesh.num_triangles());
    // blocks assembled independently of the system
    let w = ops.get(OperatorTag::Hypersingular, 0, 0).unwrap();
    let nb = -1.5 * w;
    let dstar = -2.0 * ops.get(OperatorTag::AdjointDoubleLayer, 0, 0).unwrap();
    let d = -2.0 * ops.get(OperatorTag::DoubleLayer, 0, 0).unwrap();
    let s = 3.0 * ops.get(OperatorTag::SingleLayer, 0, 0).unwrap();
    let gram1 = gram_p1(FunctionSpace::pyramid(mesh)).unwrap();
    let lap = primal_laplace_beltrami(mesh).unwrap();
    let area = mesh.total_area();
    let ones_v = DVector::from_element(nv, 1.0);
    let ones_c = DVector::from_element(nc, 1.0);
    let mut lp = DMatrix::zeros(nv, nv);
    for j in 0..nv {
        let mut e = DVector::zeros(nv);
        e[j] = 1.0;
        let col = pinv_apply(&lap, &gram1, &e).unwrap();
        lp.set_column(j, &col);
    }
    lp += &ones_v * ones_v.transpose() * (1.0 / (8.0 * PI));
    let gt = mixed_gram_dual(mesh).unwrap().to_dense();
    let gt_inv = gt.clone().try_inverse().unwrap();
    let lsp = gt_inv.transpose() * dual_laplacian(mesh).unwrap().matrix.to_dense() * &gt_inv
        + &ones_c * ones_c.transpose() * (8.0 * PI / (area * area));
    let blocks = [
        [&nb * &lp * &nb + &dstar * &lsp * &d, &nb * &lp * &dstar + &dstar * &lsp * &s],
        [&d * &lp * &nb + &s * &lsp * &d, &d * &lp * &dstar + &s * &lsp * &s],
    ];
    let mut zpz = DMatrix::zeros(nv + nc, nv + nc);
    zpz.view_mut((0, 0), (nv, nv)).copy_from(&blocks[0][0]);
    zpz.view_mut((0, nv), (nv, nc)).copy_from(&blocks[0][1]);
    zpz.view_mut((nv, 0), (nc, nv)).copy_from(&blocks[1][0]);
    zpz.view_mut((nv, nv), (nc, nc)).copy_from(&blocks[1][1]);
    let mdiag = DMatrix::from_diagonal(op.m_diagonal());
    let dense = &mdiag * &zpz * &mdiag;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let x = random(nv + nc, &mut rng);
        let a = op.apply(&x).unwrap();
        let b = &dense * &x;
        assert!((&a - &b).amax() <= 1e-8 * b.amax());
    }
    // the sandwich is symmetric positive semi-definite
    assert!((&zpz - zpz.transpose()).amax() <= 1e-10 * zpz.amax());
    let eig = zpz.symmetric_eigenvalues();
    assert!(eig.min() >= -1e-10 * eig.max());
}

#[test]
fn round_trip_recovers_random_solution() {
    let (model, mut sys) = three_sphere(1);
    let n = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let k = sys.kernel().unwrap().normalize();
    let mut y0 = random(n, &mut rng);
    y0 -= &k * k.dot(&y0);
    sys.rhs = deflated_matrix(&sys) * &y0;
    let op = PrecondOperator::build(&sys, &model).unwrap();
    let out = op.solve(1e-12, 2000, 10.0).unwrap();
    assert!(out.report.converged);
    let mut x0 = sys.unscale(&y0);
    sys.fix_gauge(&mut x0);
    assert!((&out.solution - &x0).norm() / x0.norm() < 1e-6);
}

#[test]
fn preconditioned_solution_matches_direct_solve() {
    let (model, sys) = three_sphere(2);
    let op = PrecondOperator::build(&sys, &model).unwrap();
    let out = op.solve(1e-10, 1000, 10.0).unwrap();
    let direct = sys.solve_direct().unwrap();
    let a = sys.potential(&out.solution, 2).into_owned();
    let b = sys.potential(&direct, 2).into_owned();
    assert!((&a - &b).norm() / b.norm() < 1e-6, "{}", (&a - &b).norm() / b.norm());
}

#[test]
fn unpreconditioned_condition_matches_dense_eigenvalues() {
    let (_, sys) = three_sphere(1);
    let est = unpreconditioned_condition(&sys).unwrap();
    let eig = deflated_matrix(&sys).symmetric_eigenvalues();
    let mut mags: Vec<f64> = eig.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let exact = mags[mags.len() - 1] / mags[1];
    assert!((est.cond - exact).abs() / exact < 0.02, "{} vs {exact}", est.cond);
}
