use hslag::jacobi::*;
use hslag::kahler::*;
use hslag::lagrangian::TorusImmersion;
use hslag::toric::{fiber_in_action_angle, moment_fiber, LabelledPolytope};
use hslag::Error;
use nalgebra::DMatrix;

fn product_torus(radii: &[f64], size: usize) -> TorusImmersion {
    let n = radii.len();
    let r = radii.to_vec();
    TorusImmersion::from_fn(ChartedManifold::flat(n), n, size, DMatrix::zeros(2 * n, n), move |t| {
        let mut v: Vec<f64> = (0..n).map(|i| r[i] * t[i].cos()).collect();
        v.extend((0..n).map(|i| r[i] * t[i].sin()));
        v
    })
}

/// Linear torus `p = W theta` over a fixed `q` in flat `T^4`: totally geodesic and flat.
fn linear_torus(w: [[f64; 2]; 2], size: usize) -> TorusImmersion {
    let mut winding = DMatrix::zeros(4, 2);
    for i in 0..2 {
        for a in 0..2 {
            winding[(2 + i, a)] = w[i][a];
        }
    }
    TorusImmersion::from_fn(ChartedManifold::flat(2), 2, size, winding, |_| vec![1.0, 2.0, 0.0, 0.0])
}

/// `|xi|^4` for the constant induced metric `G = W^T W`.
fn flat_oracle(op: &BoxOperator, w: [[f64; 2]; 2]) -> Mat {
    let wm = Mat::from_fn(2, 2, |i, a| w[i][a]);
    let ginv = (wm.transpose() * wm).try_inverse().unwrap();
    let d: Vec<f64> = op
        .basis
        .elements
        .iter()
        .map(|(xi, _)| {
            let x = nalgebra::DVector::from_fn(2, |i, _| xi[i] as f64);
            (x.transpose() * &ginv * &x)[0].powi(2)
        })
        .collect();
    Mat::from_diagonal(&nalgebra::DVector::from_vec(d))
}

fn sphere_equator() -> TorusImmersion {
    fiber_in_action_angle(ChartedManifold::sphere(), &[0.0], 32)
}

fn cp1_equator() -> TorusImmersion {
    fiber_in_action_angle(ChartedManifold::projective(1, CpChart::ActionAngle), &[0.5], 32)
}

fn cp2_clifford() -> TorusImmersion {
    let p = LabelledPolytope::simplex(2);
    moment_fiber(&p, &p.barycenter().unwrap(), 16).unwrap()
}

fn rel(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn flat_linear_torus_is_bilaplacian() {
    for w in [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 1.0], [0.0, 1.0]]] {
        let op = assemble_box(&linear_torus(w, 12), None).unwrap();
        assert_eq!(op.source, BoxSource::AnalyticKahler);
        assert!(rel(&op.matrix, &flat_oracle(&op, w)) < 1e-8, "{:e}", rel(&op.matrix, &flat_oracle(&op, w)));
    }
}

#[test]
fn round_product_torus_kernel_comes_from_local_isometries() {
    // translations (cos, sin of each angle), the two off-diagonal rotations
    // (cos, sin of the difference) and the constants
    let l = product_torus(&[0.8, 1.3], 16);
    let op = assemble_box(&l, None).unwrap();
    let rep = spectrum(&op, None).unwrap();
    assert_eq!(rep.kernel_dimension, 7);
    assert!(stability_check(&rep).stable);
    // none of these are Hamiltonian isometries of the flat torus
    let r = rigidity_check(&l, &op, &rep).unwrap();
    assert!(!r.rigid && r.rank == 1);
}

#[test]
fn sphere_equator_modes() {
    let op = assemble_box(&sphere_equator(), None).unwrap();
    for (i, (xi, _)) in op.basis.elements.iter().enumerate() {
        let k = xi[0] as f64;
        assert!((op.matrix[(i, i)] - (k.powi(4) - k * k)).abs() < 1e-8 * k.powi(4).max(1.0));
    }
    let rep = spectrum(&op, None).unwrap();
    assert_eq!(rep.kernel_dimension, 3);
    // transport term vanishes when H = 0
    assert_eq!(op.transport.as_ref().unwrap().amax(), 0.0);
    assert!(stability_check(&rep).stable);
    assert!((rep.min_nonkernel_eigenvalue - 12.0).abs() < 1e-8);
}

#[test]
fn cp1_equator_kernel_is_the_first_modes() {
    let op = assemble_box(&cp1_equator(), None).unwrap();
    let rep = spectrum(&op, None).unwrap();
    assert_eq!(rep.kernel_dimension, 3);
    let kernel = kernel_functions(&op, &rep).unwrap();
    let nodes = op.grid.nodes();
    // each kernel function lies in span{1, cos, sin}
    for f in &kernel {
        let fit = |g: &dyn Fn(f64) -> f64| f.iter().zip(&nodes).map(|(v, t)| v * g(t[0])).sum::<f64>() * 2.0 / nodes.len() as f64;
        let (a0, a1, b1) = (fit(&|_| 0.5), fit(&|t| t.cos()), fit(&|t| t.sin()));
        let err = f.iter().zip(&nodes).map(|(v, t)| (v - a0 - a1 * t[0].cos() - b1 * t[0].sin()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8);
    }
}

#[test]
fn kernel_dimensions() {
    let flat = spectrum(&assemble_box(&linear_torus([[1.0, 0.0], [0.0, 1.0]], 12), None).unwrap(), None).unwrap();
    assert_eq!(flat.kernel_dimension, 1);
    let cp2 = spectrum(&assemble_box(&cp2_clifford(), None).unwrap(), None).unwrap();
    assert_eq!(cp2.kernel_dimension, 7);
    assert!(cp2.asymmetry < 1e-6);
}

#[test]
fn flat_stability_margin() {
    // G = [[1, 1], [1, 2]]; the smallest |xi|^2 over nonzero integer xi is at xi = (1, -1)
    let rep = spectrum(&assemble_box(&linear_torus([[1.0, 1.0], [0.0, 1.0]], 12), None).unwrap(), None).unwrap();
    let v = stability_check(&rep);
    assert!(v.stable);
    let ginv = Mat::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 1.0]);
    let mut best = f64::INFINITY;
    for a in -5i32..=5 {
        for b in -5i32..=5 {
            if (a, b) != (0, 0) {
                let x = nalgebra::DVector::from_vec(vec![a as f64, b as f64]);
                best = best.min((x.transpose() * &ginv * &x)[0].powi(2));
            }
        }
    }
    assert!((v.margin - best).abs() < 1e-8, "{} {best}", v.margin);
}

#[test]
fn clifford_tori_are_rigid_and_stable() {
    for l in [cp1_equator(), cp2_clifford()] {
        let op = assemble_box(&l, None).unwrap();
        let rep = spectrum(&op, None).unwrap();
        assert!(stability_check(&rep).stable);
        let r = rigidity_check(&l, &op, &rep).unwrap();
        assert!(r.rigid && r.rank == rep.kernel_dimension);
    }
    let l = linear_torus([[1.0, 0.0], [0.0, 1.0]], 12);
    let op = assemble_box(&l, None).unwrap();
    let rep = spectrum(&op, None).unwrap();
    assert!(rigidity_check(&l, &op, &rep).unwrap().rigid);
}

#[test]
fn dropping_a_generator_breaks_rigidity() {
    let l = cp1_equator();
    let op = assemble_box(&l, None).unwrap();
    let rep = spectrum(&op, None).unwrap();
    let killing = killing_potentials(&l.manifold).unwrap();
    let i = killing.names.iter().position(|n| n == "Re(Z0 Z1*)").unwrap();
    let r = rigidity_check_with(&l, &op, &rep, killing.without(i)).unwrap();
    assert!(!r.rigid);
    assert_eq!(rep.kernel_dimension - r.rank, 1);
}

#[test]
fn finite_difference_matches_analytic_flat() {
    let l = linear_torus([[1.0, 1.0], [0.0, 1.0]], 12);
    let a = assemble_box(&l, Some(2)).unwrap();
    let f = box_fd(&l, 1e-3, 2).unwrap();
    assert_eq!(f.source, BoxSource::FiniteDifferenceVolume);
    assert!(rel(&f.matrix, &a.matrix) < 1e-3, "{:e}", rel(&f.matrix, &a.matrix));
}

#[test]
fn finite_difference_matches_equator_modes() {
    let f = box_fd(&sphere_equator(), 1e-3, 5).unwrap();
    for (i, (xi, _)) in f.basis.elements.iter().enumerate() {
        let k = xi[0] as f64;
        let exact = k.powi(4) - k * k;
        assert!((f.matrix[(i, i)] - exact).abs() < 1e-3 * exact.max(1.0), "{k} {}", f.matrix[(i, i)]);
    }
}

#[test]
fn finite_difference_agrees_on_kahler_cases() {
    for l in [cp1_equator(), cp2_clifford().resampled(12)] {
        let m = if l.n == 1 { 4 } else { 2 };
        let a = assemble_box(&l, Some(m)).unwrap();
        let f = box_fd(&l, 1e-3, m).unwrap();
        assert!(rel(&f.matrix, &a.matrix) < 1e-2, "{:e}", rel(&f.matrix, &a.matrix));
    }
}

#[test]
fn leading_symbol_on_an_ellipsoid() {
    let m = ChartedManifold::new(Backend::SurfaceOfRevolution(Surface::ellipsoid([1.0, 1.0, 1.3])));
    let l = fiber_in_action_angle(m, &[0.0], 32);
    let top = |modes: usize| -> f64 {
        let rep = spectrum(&box_fd(&l, 1e-3, modes).unwrap(), None).unwrap();
        *rep.eigenvalues.last().unwrap()
    };
    let (a, b) = (top(4), top(8));
    let slope = (b / a).ln() / 2f64.ln();
    assert!((slope - 4.0).abs() < 0.2, "{slope}");
}

#[test]
fn selfadjointness_at_stationary_points() {
    let p = LabelledPolytope::simplex(2);
    let l = moment_fiber(&p, &[0.2, 0.45], 16).unwrap();
    let op = assemble_box(&l, None).unwrap();
    let r = selfadjoint_diagnostics(&l, &op, 3).unwrap();
    assert!(r.full_asymmetry < 1e-6 && r.divergence_jh < 1e-7, "{r:?}");
    assert!(r.transport_norm > 1e-3);
}

#[test]
fn asymmetry_tracks_divergence_off_stationary() {
    let winding = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let l = TorusImmersion::from_fn(ChartedManifold::sphere(), 1, 32, winding, |t| {
        vec![0.5 + 0.1 * (2.0 * t[0]).sin(), 0.0]
    });
    let op = assemble_box(&l, None).unwrap();
    let r = selfadjoint_diagnostics(&l, &op, 4).unwrap();
    assert!(r.d_part_asymmetry < 1e-6, "{r:?}");
    assert!(r.divergence_jh > 1e-2 && r.full_asymmetry > 1e-4, "{r:?}");
}

#[test]
fn under_resolved_grids_are_rejected() {
    let l = sphere_equator();
    assert!(matches!(assemble_box(&l, Some(16)), Err(Error::QuadratureUnderResolved { .. })));
}

#[test]
fn perturbed_structures_need_finite_differences() {
    let m = ChartedManifold::flat(2).with_perturbation(std::sync::Arc::new(hslag::deform::AntiInvariantField::new("t", |_p: &[f64]| {
        let mut a = Mat::zeros(4, 4);
        a[(0, 2)] = 1e-3;
        a[(2, 0)] = 1e-3;
        a
    })));
    let l = fiber_in_action_angle(m, &[1.0, 2.0], 8);
    assert!(matches!(assemble_box(&l, None), Err(Error::NonIntegrableBackend)));
}

#[test]
fn spectrum_exports_csv() {
    let rep = spectrum(&assemble_box(&sphere_equator(), Some(3)).unwrap(), None).unwrap();
    let csv = rep.to_csv();
    assert_eq!(csv.lines().count(), 1 + rep.eigenvalues.len());
    assert!(csv.starts_with("index,eigenvalue,kernel"));
}
