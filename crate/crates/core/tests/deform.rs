use hslag::deform::*;
use hslag::fields::*;
use hslag::kahler::*;
use hslag::kahler::laplacian as ambient_laplacian;
use hslag::lagrangian::{immersion_geometry, mean_curvature, volume, TorusImmersion};
use hslag::toric::fiber_in_action_angle;
use hslag::Error;
use std::sync::{Arc, OnceLock};

fn cp1() -> ChartedManifold {
    ChartedManifold::projective(1, CpChart::ActionAngle)
}

fn cp1_equator() -> TorusImmersion {
    fiber_in_action_angle(cp1(), &[0.5], 32)
}

/// Small anti-invariant perturbation of the CP^1 metric with no symmetry.
fn cp1_generic(amplitude: f64) -> AntiInvariantField {
    AntiInvariantField::new("generic", move |p: &[f64]| {
        let (x, t) = (p[0] - 0.5, p[1]);
        let off = amplitude * (2.0 * t).sin() * (1.0 - 3.0 * x);
        Mat::from_row_slice(2, 2, &[amplitude * t.cos() * (1.0 + 4.0 * x), off, off, 0.0])
    })
}

/// `p^T A p / 2` with exact derivatives.
struct Quadratic(Mat);

impl ScalarField for Quadratic {
    fn value(&self, p: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(p);
        0.5 * (v.transpose() * &self.0 * &v)[0]
    }
    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        (&self.0 * nalgebra::DVector::from_column_slice(p)).iter().copied().collect()
    }
    fn hessian(&self, _p: &[f64]) -> Mat {
        self.0.clone()
    }
}

struct PathFixture {
    phi: Field,
    path: PerturbationPath,
}

fn equator_path() -> &'static PathFixture {
    static CELL: OnceLock<PathFixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let phi: Field = Arc::new(bump_quartic_potential(&cp1_equator()).unwrap());
        let path = integrate_positive_path(&cp1(), phi.clone(), &PathOptions::new((0.35, 0.65), 0.1, 20)).unwrap();
        PathFixture { phi, path }
    })
}

#[test]
fn reference_seed_needs_no_correction() {
    let m = cp1();
    let sol = solve_relative_hslag(&RelativeHslagProblem::new(&m, &cp1_equator()).unwrap()).unwrap();
    assert_eq!(sol.iterations, 0);
    assert!(sol.potential.iter().all(|h| *h == 0.0));
    assert!(sol.obstruction_coefficients.iter().all(|c| c.abs() < 1e-12));
    assert!(sol.residual_sup < 1e-10);
}

#[test]
fn newton_converges_quadratically_on_perturbed_sphere() {
    let m = cp1().with_perturbation(Arc::new(cp1_generic(1e-3)));
    let sol = solve_relative_hslag(&RelativeHslagProblem::new(&m, &cp1_equator()).unwrap()).unwrap();
    assert!(sol.iterations >= 1 && sol.iterations <= 6, "{:?}", sol.history);
    let h = &sol.history;
    assert!(*h.last().unwrap() < 1e-9);
    for w in h.windows(2) {
        if w[1] > 1e-12 {
            assert!(w[1] / (w[0] * w[0]) < 1e4, "{h:?}");
        }
    }
}

#[test]
fn flat_obstruction_has_no_constant_part() {
    let flat = ChartedManifold::flat(2);
    let pert = AntiInvariantField::new("flat", |p: &[f64]| {
        let e = 1e-3;
        let mut t = Mat::zeros(4, 4);
        t[(0, 0)] = e * (p[0] + 0.5 * p[3]).sin();
        t[(1, 2)] = e * (p[1] - p[2]).cos();
        t[(2, 1)] = t[(1, 2)];
        t[(3, 3)] = e * (2.0 * p[2]).cos();
        t
    });
    let m = flat.clone().with_perturbation(Arc::new(pert));
    let seed = fiber_in_action_angle(flat, &[1.0, 2.0], 12);
    let prob = RelativeHslagProblem::new(&m, &seed).unwrap();
    assert_eq!(prob.obstruction.len(), 1);
    let sol = solve_relative_hslag(&prob).unwrap();
    assert!(sol.potential.iter().any(|h| h.abs() > 1e-9));
    assert!(sol.obstruction_coefficients[0].abs() < 1e-9, "{:?}", sol.obstruction_coefficients);
}

#[test]
fn orbit_volume_at_identity_is_seed_volume() {
    let eq = cp1_equator();
    let op = OrbitProblem::new(&cp1(), &eq).unwrap();
    let ev = modified_volume(&op, &[0.0, 0.0]).unwrap();
    let v = volume(&eq).unwrap();
    assert!((ev.value - v).abs() < 1e-12);
}

#[test]
fn reference_orbit_volume_is_constant() {
    let eq = cp1_equator();
    let v0 = volume(&eq).unwrap();
    let op = OrbitProblem::new(&cp1(), &eq).unwrap();
    assert_eq!(op.dim(), 2);
    for k in 0..20 {
        let ang = k as f64 * 0.9;
        let r = 0.02 + 0.015 * k as f64;
        let ev = modified_volume(&op, &[r * ang.cos(), r * ang.sin()]).unwrap();
        assert!((ev.value - v0).abs() < 1e-8 * v0, "k {k}: {} vs {v0}", ev.value);
    }
}

#[test]
fn perturbed_orbit_volume_is_smooth_and_nonconstant() {
    let m = cp1().with_perturbation(Arc::new(cp1_generic(1e-3)));
    let op = OrbitProblem::new(&m, &cp1_equator()).unwrap();
    let f = |a: f64| modified_volume(&op, &[a, 0.3 * a]).unwrap().value;
    let a0 = 0.1;
    let (fm2, fm, f0, fp, fp2) = (f(a0 - 0.04), f(a0 - 0.02), f(a0), f(a0 + 0.02), f(a0 + 0.04));
    assert!(fm2.is_finite() && fp2.is_finite());
    let coarse = (fp2 - fm2) / 0.08;
    let fine = (fp - fm) / 0.04;
    assert!(coarse.abs() > 1e-5, "derivative {coarse:e}");
    let curv = (fp - 2.0 * f0 + fm) / 4e-4;
    // central differences at h and 2h differ by h^2 f'''/2
    assert!((coarse - fine).abs() < 1e-2 * fine.abs() + 1e-8, "{coarse:e} {fine:e}");
    assert!(curv.is_finite());
}

#[test]
fn reference_minimum_is_trivial() {
    let op = OrbitProblem::new(&cp1(), &cp1_equator()).unwrap();
    let min = minimize_over_orbit(&op, &[0.0, 0.0], &MinimizeOptions::default()).unwrap();
    assert!(min.params.iter().all(|a| a.abs() < 1e-6));
    assert!(min.gradient.iter().all(|g| g.abs() < 1e-8));
    assert!(min.hslag_residual < 1e-8);
    assert!(!min.nondegenerate);
}

#[test]
fn ellipsoid_of_revolution_keeps_parallel_curvature_constant() {
    let sphere = ChartedManifold::sphere();
    let m = sphere.clone().with_perturbation(Arc::new(SurfaceStructure(Surface::ellipsoid([1.0, 1.0, 1.3]))));
    let seed = fiber_in_action_angle(sphere, &[0.3], 32);
    let op = OrbitProblem::new(&m, &seed).unwrap();
    let min = minimize_over_orbit(&op, &vec![0.0; op.dim()], &MinimizeOptions::default()).unwrap();
    assert!(min.hslag_residual < 1e-7, "{:e}", min.hslag_residual);
    let spread = curvature_spread(&min.solution.immersion).unwrap();
    assert!(spread.relative < 1e-6, "{spread:?}");
}

#[test]
fn toric_continuation_returns_the_fibers() {
    let m = cp1();
    let family = |t: f64| Ok(fiber_in_action_angle(cp1(), &[0.5 + t], 32));
    let rep = continuation(&m, &family, &[0.0, 0.05, 0.1], Tolerances::default(), &MinimizeOptions::default()).unwrap();
    assert!(rep.stopped.is_none());
    assert_eq!(rep.steps.len(), 3);
    for step in &rep.steps {
        let fiber = family(step.t).unwrap();
        let diff = step
            .immersion
            .values
            .iter()
            .zip(&fiber.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert_eq!(diff, 0.0);
        assert!(step.residual_sup < 1e-8);
    }
}

#[test]
fn positive_path_continues_parallels() {
    let js = equator_path().path.structure_at(0.05).unwrap().unwrap();
    let m = cp1().with_perturbation(js);
    let family = |t: f64| Ok(fiber_in_action_angle(cp1(), &[0.5 + t], 32));
    let rep = continuation(&m, &family, &[0.0, 0.01, 0.02], Tolerances::default(), &MinimizeOptions::default()).unwrap();
    let (lo, hi) = rep.interval();
    assert!(hi > lo, "{:?}", rep.stopped);
    for step in &rep.steps {
        assert!(step.min_hessian_eigenvalue.unwrap() > 0.0);
        assert!(step.curvature_spread.unwrap() < 1e-5, "t {} spread {:?}", step.t, step.curvature_spread);
    }
}

#[test]
fn degenerate_start_stops_continuation() {
    let m = cp1().with_perturbation(Arc::new(cp1_generic(0.0)));
    let family = |t: f64| Ok(fiber_in_action_angle(cp1(), &[0.5 + t], 32));
    match continuation(&m, &family, &[0.0, 0.01], Tolerances::default(), &MinimizeOptions::default()) {
        Err(Error::ContinuationStopped { t, reason }) => {
            assert_eq!(t, 0.0);
            assert!(reason.to_lowercase().contains("degenerate"), "{reason}");
        }
        other => panic!("expected a stop, got {:?}", other.map(|r| r.steps.len())),
    }
}

#[test]
fn pluriharmonic_variation_is_twice_the_hessian() {
    let flat = ChartedManifold::flat(2);
    let phi = Quadratic(Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.0, -2.0, 0.0])));
    let p = [0.3, -0.2, 0.7, 0.1];
    let out = metric_variation(&flat, &phi, VariationMode::TwistedLie, &p).unwrap();
    let mut expected = Mat::zeros(4, 4);
    expected[(0, 0)] = 4.0;
    expected[(2, 2)] = -4.0;
    assert!((out - expected).amax() < 1e-10);
}

#[test]
fn invariant_hessian_gives_no_variation() {
    let flat = ChartedManifold::flat(2);
    let phi = Quadratic(Mat::identity(4, 4) * 2.0);
    let p = [0.3, -0.2, 0.7, 0.1];
    for mode in [VariationMode::TwistedLie, VariationMode::Lie] {
        assert!(metric_variation(&flat, &phi, mode, &p).unwrap().amax() < 1e-10);
    }
}

#[test]
fn variation_modes_are_related_by_the_structure() {
    let cases: Vec<(ChartedManifold, Field, Vec<f64>)> = vec![
        (cp1(), potential(|p| (p[0] * p[0] * p[1].cos()) + (2.0 * p[1]).sin() * p[0]), vec![0.4, 1.1]),
        (
            ChartedManifold::projective(2, CpChart::Affine),
            potential(|p| p[0] * p[1] + (p[2] - p[3]).sin() + p[0] * p[0] * p[3]),
            vec![0.2, -0.1, 0.3, 0.15],
        ),
        (ChartedManifold::sphere(), potential(|p| p[0].powi(3) * p[1].sin()), vec![0.2, 0.8]),
    ];
    for (m, phi, p) in cases {
        let a = metric_variation(&m, phi.as_ref(), VariationMode::Lie, &p).unwrap();
        let b = metric_variation(&m, phi.as_ref(), VariationMode::TwistedLie, &p).unwrap();
        let j = eval_tensors(&m, &p, m.fd_step).unwrap().acs;
        // a(X, Y) = -2 D^- d^c phi(X, Y) = 2 D^- d phi(J X, Y) = b(J X, Y)
        let predicted = j.transpose() * &b;
        assert!((&a - &predicted).amax() < 1e-9 * b.amax().max(1.0), "{a} vs {predicted}");
        assert!(b.amax() > 1e-3);
    }
}

#[test]
fn zero_potential_path_is_constant() {
    let phi: Field = Arc::new(Affine { constant: 0.0, linear: vec![0.0, 0.0] });
    let path = integrate_positive_path(&cp1(), phi, &PathOptions::new((0.35, 0.65), 0.1, 4)).unwrap();
    // only the compatibility retraction touches the reference metric, at roundoff level
    for d in &path.deltas {
        assert!(d.iter().all(|v| v.iter().all(|c| c.abs() < 1e-13)));
    }
    let m = path.manifold_at(0.1).unwrap();
    let p = [0.45, 2.0];
    assert!((m.acs(&p).unwrap() - cp1().acs(&p).unwrap()).amax() < 1e-14);
}

#[test]
fn path_keeps_equator_stationary() {
    let fx = equator_path();
    let eq = cp1_equator();
    let g0: Vec<Mat> = immersion_geometry(&eq, false).unwrap().nodes.into_iter().map(|g| g.metric).collect();
    for s in [0.02, 0.05, 0.1] {
        let l = eq.with_manifold(fx.path.manifold_at(s).unwrap());
        let mc = mean_curvature(&l).unwrap();
        assert!(mc.residual_sup < 1e-7, "s {s}: {:e}", mc.residual_sup);
        let geom = immersion_geometry(&l, false).unwrap();
        let drift = geom.nodes.iter().zip(&g0).map(|(g, h)| (&g.metric - h).amax() / h.amax()).fold(0.0, f64::max);
        assert!(drift < 1e-8, "s {s}: induced metric drift {drift:e}");
    }
}

#[test]
fn volume_rate_matches_half_integrated_laplacian() {
    let fx = equator_path();
    let eq = cp1_equator();
    let (gens, _) = transverse_generators(&cp1(), &eq).unwrap();
    let u = eq.transported(gens[0].as_ref(), 0.08, 16).unwrap();
    let vol = |s: f64| volume(&u.with_manifold(fx.path.manifold_at(s).unwrap())).unwrap();
    let fd = (-3.0 * vol(0.0) + 4.0 * vol(0.005) - vol(0.01)) / 0.01;
    let geom = immersion_geometry(&u, false).unwrap();
    let lap: f64 = u
        .values
        .iter()
        .zip(&geom.nodes)
        .map(|(p, g)| ambient_laplacian(&cp1(), fx.phi.as_ref(), p).unwrap() * g.sqrt_det)
        .sum::<f64>()
        * u.grid.weight();
    assert!(fd.abs() > 1e-4);
    assert!((fd - 0.5 * lap).abs() < 1e-3 * fd.abs(), "fd {fd:e} half laplacian {:e}", 0.5 * lap);
    let pointwise = volume_rate(&u, fx.phi.as_ref()).unwrap();
    assert!((fd - pointwise).abs() < 1e-3 * fd.abs());
}

#[test]
fn bump_vanishes_to_third_order_on_the_curve() {
    let eq = cp1_equator();
    let bump = bump_quartic_potential(&eq).unwrap();
    for p in eq.values.iter().step_by(5) {
        assert!(bump.value(p).abs() < 1e-14);
        assert!(bump.gradient(p).iter().all(|g| g.abs() < 1e-9));
        assert!(bump.hessian(p).amax() < 1e-5);
    }
}

#[test]
fn flat_fiber_laplacian_of_quartic() {
    // a linear circle in flat C has a flat R^1 normal fiber, a linear T^2 in T^4 has R^2
    for (m, seed) in [
        (ChartedManifold::flat(1), fiber_in_action_angle(ChartedManifold::flat(1), &[1.0], 32)),
        (ChartedManifold::flat(2), fiber_in_action_angle(ChartedManifold::flat(2), &[1.0, 2.0], 12)),
    ] {
        let bump = bump_with_radius(&seed, 0.8).unwrap();
        let k = seed.n as f64;
        let base = &seed.values[3];
        for r in [0.05, 0.1, 0.15] {
            let mut q = base.clone();
            q[0] += r;
            let d = bump.distance(&q).unwrap();
            assert!((d - r).abs() < 1e-12);
            // Laplacian of -r^4 / (4 (k + 2)) is r^2 in the d*d sign
            let lap = ambient_laplacian(&m, &bump, &q).unwrap();
            assert!((lap - r * r).abs() < 1e-6 * r * r + 1e-9, "k {k} r {r}: {lap:e}");
            let raw = -lap / bump.coefficient();
            assert!((raw + 4.0 * r * r * (k + 2.0)).abs() < 1e-5 * r * r * (k + 2.0));
        }
    }
}

#[test]
fn sphere_fiber_ratio_tends_to_one() {
    let eq = fiber_in_action_angle(ChartedManifold::sphere(), &[0.0], 64);
    let bump = bump_with_radius(&eq, 0.4).unwrap();
    let mut errs = Vec::new();
    for r in [0.1f64, 0.05, 0.025] {
        // the normal fiber over the equator is the meridian chart line, unit speed at z = 0
        let q = vec![r, 0.0];
        let d = bump.distance(&q).unwrap();
        assert!((d - r).abs() < 1e-10, "{d} {r}");
        let lap = ambient_laplacian(&ChartedManifold::sphere(), &bump, &q).unwrap();
        errs.push(((lap / (r * r)) - 1.0).abs());
    }
    assert!(errs[2] < errs[1] && errs[1] < errs[0], "{errs:?}");
    for (e, r) in errs.iter().zip([0.1, 0.05, 0.025]) {
        assert!(*e < 2.0 * r, "{errs:?}");
    }
}

#[test]
fn positivity_signs() {
    let fx = equator_path();
    let eq = cp1_equator();
    let (gens, _) = transverse_generators(&cp1(), &eq).unwrap();
    let rep = positivity_experiment(&eq, &fx.path, &[0.0, 0.05], &gens, 1e-2).unwrap();
    assert_eq!(rep.rows.len(), 2 * gens.len());
    for row in rep.at(0.0) {
        assert!(row.second_derivative.abs() < 1e-7, "{row:?}");
    }
    for row in rep.at(0.05) {
        assert!(row.second_derivative > 0.0, "{row:?}");
    }
    assert!(rep.to_csv().starts_with("s,subgroup,second_derivative\n"));
}

#[test]
fn rotation_about_the_axis_is_not_transverse() {
    let fx = equator_path();
    let eq = cp1_equator();
    let rot: Field = Arc::new(Affine::coordinate(2, 0));
    assert!(matches!(check_transverse(&eq, &rot), Err(Error::NonTransverseSubgroup)));
    assert!(matches!(
        positivity_experiment(&eq, &fx.path, &[0.05], &[rot], 1e-2),
        Err(Error::NonTransverseSubgroup)
    ));
}
