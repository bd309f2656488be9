//! A path of almost complex structures generated by a quartic bump around the
//! equator of CP^1, and the convexity it produces along transverse subgroups.

use hslag::deform::{bump_quartic_potential, integrate_positive_path, positivity_experiment, transverse_generators, volume_rate, PathOptions};
use hslag::fields::ScalarField;
use hslag::kahler::{ChartedManifold, CpChart};
use hslag::lagrangian::{mean_curvature, volume};
use hslag::toric::fiber_in_action_angle;
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cp1 = ChartedManifold::projective(1, CpChart::ActionAngle);
    let equator = fiber_in_action_angle(cp1.clone(), &[0.5], 32);
    let bump = bump_quartic_potential(&equator)?;
    println!("bump radius {:.4}, coefficient {:.4}", bump.radius, bump.coefficient());
    let phi: Arc<dyn ScalarField> = Arc::new(bump);
    let path = integrate_positive_path(&cp1, phi.clone(), &PathOptions::new((0.35, 0.65), 0.1, 20))?;
    for s in [0.0, 0.05, 0.1] {
        let l = equator.with_manifold(path.manifold_at(s)?);
        println!("s = {s}: equator length {:.12}, residual {:.1e}, mesh norm {:.2e}", volume(&l)?, mean_curvature(&l)?.residual_sup, path.mesh_norm(s)?);
    }
    let (generators, names) = transverse_generators(&cp1, &equator)?;
    let tilted = equator.transported(generators[0].as_ref(), 0.08, 16)?;
    println!("volume rate of a tilted equator {:.4e}", volume_rate(&tilted, phi.as_ref())?);
    let report = positivity_experiment(&equator, &path, &[0.0, 0.02, 0.05, 0.1], &generators, 1e-2)?;
    for row in &report.rows {
        println!("  s = {:.2}, subgroup {}: second derivative {:+.4e}", row.s, names[row.subgroup], row.second_derivative);
    }
    Ok(())
}
