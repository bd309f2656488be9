//! Continuation of the parallels fibration of CP^1 under a positive perturbation
//! with a small generic term on top: each parallel is replaced by the orbit
//! minimizer of the modified volume.

use hslag::deform::{
    bump_quartic_potential, continuation, curvature_spread, integrate_positive_path, minimize_over_orbit, AntiInvariantField, Composite,
    MinimizeOptions, OrbitProblem, PathOptions, Tolerances,
};
use hslag::fields::ScalarField;
use hslag::kahler::{ChartedManifold, CpChart, Mat};
use hslag::toric::fiber_in_action_angle;
use std::f64::consts::PI;
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cp1 = || ChartedManifold::projective(1, CpChart::ActionAngle);
    let equator = fiber_in_action_angle(cp1(), &[0.5], 32);
    let phi: Arc<dyn ScalarField> = Arc::new(bump_quartic_potential(&equator)?);
    let path = integrate_positive_path(&cp1(), phi, &PathOptions::new((0.35, 0.65), 0.1, 20))?;
    let positive = path.structure_at(0.05)?.expect("s > 0 carries a perturbation");
    let generic = AntiInvariantField::new("generic", |p: &[f64]| {
        let w = 1e-3 * (2.0 * PI * p[0] + p[1] + 0.3).cos();
        Mat::from_row_slice(2, 2, &[w, 0.5 * w, 0.5 * w, 0.0])
    });
    let m = cp1().with_perturbation(Arc::new(Composite(vec![positive, Arc::new(generic)])));

    let min = minimize_over_orbit(&OrbitProblem::new(&m, &equator)?, &[0.0, 0.0], &MinimizeOptions::default())?;
    let spread = curvature_spread(&min.solution.immersion)?;
    println!("equator minimizer {:.5?}, eigenvalues {:.5?}, curvature spread {:.1e}", min.params, min.hessian_eigenvalues, spread.relative);

    let family = |t: f64| Ok(fiber_in_action_angle(cp1(), &[0.5 + t], 32));
    let rep = continuation(&m, &family, &[0.0, 0.01, 0.02, 0.03], Tolerances::default(), &MinimizeOptions::default())?;
    for step in &rep.steps {
        println!(
            "  t = {:.2}: params {:.5?}, length {:.10}, residual {:.1e}, spread {:.1e}",
            step.t,
            step.params,
            step.volume,
            step.residual_sup,
            step.curvature_spread.unwrap_or(f64::NAN)
        );
    }
    let (lo, hi) = rep.interval();
    println!("fibration continued over [{lo}, {hi}]");
    if let Some((t, why)) = &rep.stopped {
        println!("stopped at t = {t}: {why}");
    }
    Ok(())
}
