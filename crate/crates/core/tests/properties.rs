use hslag::deform::*;
use hslag::fields::Combination;
use hslag::jacobi::{assemble_box, spectrum};
use hslag::kahler::*;
use hslag::lagrangian::{deform_by, mean_curvature, second_variation_fd, volume, TorusImmersion};
use hslag::toric::{fiber_in_action_angle, guillemin_metric, LabelledPolytope};
use hslag::Error;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use std::collections::HashSet;
use std::f64::consts::PI;
use std::sync::Arc;

fn cp1() -> ChartedManifold {
    ChartedManifold::projective(1, CpChart::ActionAngle)
}

fn cp1_equator() -> TorusImmersion {
    fiber_in_action_angle(cp1(), &[0.5], 32)
}

/// Low-mode deformation potential on a circle.
fn wave(l: &TorusImmersion, c: &[f64]) -> Vec<f64> {
    l.grid
        .nodes()
        .iter()
        .map(|t| c.chunks(2).enumerate().map(|(k, ab)| ab[0] * ((k + 1) as f64 * t[0]).cos() + ab[1] * ((k + 1) as f64 * t[0]).sin()).sum())
        .collect()
}

fn coeffs(len: usize, size: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-size..size, len)
}

fn killing_combination(m: &ChartedManifold, c: &[f64]) -> Combination {
    let basis = killing_potentials(m).unwrap();
    Combination(c.iter().zip(basis.fields.iter().skip(1)).map(|(a, f)| (*a, f.clone())).collect())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn polytope_potential_is_strictly_convex(which in 0usize..4, raw in prop::collection::vec(-0.2f64..2.2, 2)) {
        let p = match which {
            0 => LabelledPolytope::simplex(2),
            1 => LabelledPolytope::cube(&[1.0, 2.0]),
            2 => LabelledPolytope::new(vec![vec![1, 0], vec![0, 1], vec![0, -1], vec![-1, -1]], vec![0.0, 0.0, 1.0, 2.0]),
            _ => LabelledPolytope::interval(2.0),
        };
        let x: Vec<f64> = raw[..p.dim].to_vec();
        prop_assume!(p.margin(&x) > 1e-3);
        let g = guillemin_metric(&p, &x).unwrap();
        let eig = g.hessian.clone().symmetric_eigenvalues();
        prop_assert!(eig.min() > 0.0, "{eig}");
    }

    #[test]
    fn deformation_is_undone_by_its_negative(c in coeffs(4, 1.2e-5)) {
        let l = cp1_equator();
        let f = wave(&l, &c);
        let there = deform_by(&l, &f).unwrap();
        let back = deform_by(&there, &f.iter().map(|v| -v).collect::<Vec<_>>()).unwrap();
        prop_assert!(back.distance(&l) < 1e-7, "{:e}", back.distance(&l));
    }

    #[test]
    fn deformation_inverse_restores_the_image(c in coeffs(4, 1.2e-4)) {
        // node-wise the round trip is off by a second-order reparametrization; the image is not
        let l = cp1_equator();
        let f = wave(&l, &c);
        let there = deform_by(&l, &f).unwrap();
        let back = deform_by(&there, &f.iter().map(|v| -v).collect::<Vec<_>>()).unwrap();
        let off = back.values.iter().map(|p| (p[0] - 0.5).abs()).fold(0.0, f64::max);
        prop_assert!(off < 1e-9, "{off:e}");
    }

    #[test]
    fn volume_ignores_reparametrization(c in coeffs(4, 0.005), a in 0.0f64..0.3, b in -PI..PI) {
        let l = deform_by(&cp1_equator(), &wave(&cp1_equator(), &c)).unwrap();
        let warped = l.reparametrized(|t| vec![t[0] + a * (t[0] + b).sin()]);
        let (v0, v1) = (volume(&l).unwrap(), volume(&warped).unwrap());
        prop_assert!((v0 - v1).abs() < 1e-8, "{v0} {v1}");
    }

    #[test]
    fn residual_integrates_to_zero(c in coeffs(4, 0.005)) {
        let l = deform_by(&cp1_equator(), &wave(&cp1_equator(), &c)).unwrap();
        let mc = mean_curvature(&l).unwrap();
        prop_assert!(mc.residual_integral.abs() < 1e-10 * mc.residual_l2.max(1.0), "{:e}", mc.residual_integral);
    }

    #[test]
    fn residual_norms_are_isometry_invariant(c in coeffs(4, 0.005), k in coeffs(3, 0.3)) {
        let l = deform_by(&cp1_equator(), &wave(&cp1_equator(), &c)).unwrap();
        let moved = l.transported(&killing_combination(&cp1(), &k), 1.0, 64).unwrap();
        let (a, b) = (mean_curvature(&l).unwrap(), mean_curvature(&moved).unwrap());
        prop_assert!((a.residual_sup - b.residual_sup).abs() < 1e-8, "{:e} {:e}", a.residual_sup, b.residual_sup);
        prop_assert!((a.residual_l2 - b.residual_l2).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn kernel_is_isometry_invariant(k in coeffs(3, 0.3)) {
        let l = cp1_equator();
        let moved = l.transported(&killing_combination(&cp1(), &k), 1.0, 64).unwrap();
        let a = spectrum(&assemble_box(&l, None).unwrap(), None).unwrap();
        let b = spectrum(&assemble_box(&moved, None).unwrap(), None).unwrap();
        prop_assert_eq!(a.kernel_dimension, b.kernel_dimension);
    }

    #[test]
    fn newton_converges_quadratically(amp in 2e-4f64..2e-3, phase in -PI..PI) {
        let pert = AntiInvariantField::new("random", move |p: &[f64]| {
            let (x, t) = (p[0] - 0.5, p[1] + phase);
            let off = amp * (2.0 * t).sin() * (1.0 - 3.0 * x);
            Mat::from_row_slice(2, 2, &[amp * t.cos() * (1.0 + 4.0 * x), off, off, -amp * (3.0 * t).cos()])
        });
        let m = cp1().with_perturbation(Arc::new(pert));
        let sol = solve_relative_hslag(&RelativeHslagProblem::new(&m, &cp1_equator()).unwrap()).unwrap();
        let h = &sol.history;
        prop_assert!(h.len() >= 2 && h.len() <= 7, "{h:?}");
        for w in h[h.len().saturating_sub(3)..].windows(2) {
            // below 1e-10 the residual sits on its evaluation floor
            prop_assert!(w[1] <= 1e4 * w[0] * w[0] || w[1] < 1e-10, "{h:?}");
        }
    }
}

#[test]
fn quadratic_form_is_the_second_variation() {
    let l = cp1_equator();
    let op = assemble_box(&l, Some(6)).unwrap();
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = coeffs(op.len(), 1.0);
    for _ in 0..10 {
        let c = strategy.new_tree(&mut runner).unwrap().current();
        let u = op.synthesize(&c);
        let scale = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let u: Vec<f64> = u.iter().map(|v| v / scale).collect();
        let c: Vec<f64> = c.iter().map(|v| v / scale).collect();
        let q = op.quadratic_form(&c);
        let fd = second_variation_fd(&l, &u, 1e-3).unwrap();
        assert!((fd - q).abs() < 1e-3 * q.abs(), "fd {fd:e} form {q:e}");
    }
}

#[test]
fn orbit_minimum_is_fully_stationary_and_gauge_invariant() {
    let sphere = ChartedManifold::sphere();
    let m = sphere.clone().with_perturbation(Arc::new(SurfaceStructure(Surface::tilted([0.985, 1.0, 1.015], [0.0, 1.0, 0.0], 0.4))));
    let tol = Tolerances::default();
    let seed = fiber_in_action_angle(sphere, &[0.0], 32);
    let mut volumes = Vec::new();
    for (a, b) in [(0.0, 0.0), (0.2, 0.4), (0.35, -1.0)] {
        let warped = seed.reparametrized(|t| vec![t[0] + a * (t[0] + b).sin()]);
        let family = |_t: f64| Ok(warped.clone());
        let rep = continuation(&m, &family, &[0.0], tol, &MinimizeOptions::default()).unwrap();
        let step = &rep.steps[0];
        let full = mean_curvature(&step.immersion).unwrap();
        assert!(full.residual_sup < tol.hslag_tol, "{:e}", full.residual_sup);
        assert!(step.residual_sup < tol.hslag_tol);
        volumes.push(step.volume);
    }
    for v in &volumes[1..] {
        assert!((v - volumes[0]).abs() < 1e-8, "{volumes:?}");
    }
}

#[test]
fn error_codes_are_distinct() {
    let all = vec![
        Error::PointOutsideChart { point: vec![] },
        Error::DegenerateMetric { point: vec![], min_eig: 0.0 },
        Error::FlowLeftAtlas { time: 0.0 },
        Error::UnsupportedBackend { backend: String::new() },
        Error::NonCompact,
        Error::NonSimpleVertex { vertex: vec![], facets: 0 },
        Error::NonUnimodularVertex { vertex: vec![], det: 0.0 },
        Error::BoundaryPoint { point: vec![] },
        Error::ZeroVector,
        Error::DegenerateOrbit,
        Error::OffLevelSet { index: 0, deviation: 0.0 },
        Error::PolytopeParse(String::new()),
        Error::DegenerateInducedMetric { node: 0 },
        Error::NotLagrangian { defect: 0.0 },
        Error::TubeTooSmall { radius: 0.0, displacement: 0.0 },
        Error::SolverDiverged(String::new()),
        Error::FamilyOverlap { separation: 0.0 },
        Error::Snapshot(String::new()),
        Error::NonIntegrableBackend,
        Error::QuadratureUnderResolved { grid: 0, modes: 0 },
        Error::EigenSolverFailure(String::new()),
        Error::NewtonDiverged { history: vec![] },
        Error::ObstructionRankLoss { rank: 0, expected: 0 },
        Error::IllConditionedBox { condition: 0.0 },
        Error::DescentStalled { gradient: 0.0 },
        Error::DegenerateMinimum { min_eig: 0.0 },
        Error::ContinuationStopped { t: 0.0, reason: String::new() },
        Error::ConstraintDriftExceeded { drift: 0.0 },
        Error::NonTransverseSubgroup,
        Error::ConfigInvalid(String::new()),
        Error::Io(String::new()),
    ];
    let codes: HashSet<&str> = all.iter().map(|e| e.code()).collect();
    assert_eq!(codes.len(), all.len());
    assert!(codes.iter().all(|c| c.starts_with("E_")));
}
