//! Newton iteration for the relative problem on CP^1 under a small non-invariant
//! perturbation of the complex structure: the equator is corrected up to a
//! residual lying in the span of restricted Killing potentials.

use hslag::deform::{solve_relative_hslag, AntiInvariantField, RelativeHslagProblem};
use hslag::kahler::{ChartedManifold, CpChart, Mat};
use hslag::lagrangian::mean_curvature;
use hslag::toric::fiber_in_action_angle;
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cp1 = ChartedManifold::projective(1, CpChart::ActionAngle);
    let equator = fiber_in_action_angle(cp1.clone(), &[0.5], 32);
    for amplitude in [1e-3, 5e-3, 2e-2] {
        let field = AntiInvariantField::new("wobble", move |p: &[f64]| {
            let (x, t) = (p[0] - 0.5, p[1]);
            let off = amplitude * (2.0 * t).sin() * (1.0 - 3.0 * x);
            Mat::from_row_slice(2, 2, &[amplitude * t.cos() * (1.0 + 4.0 * x), off, off, 0.0])
        });
        let m = cp1.clone().with_perturbation(Arc::new(field));
        let before = mean_curvature(&equator.with_manifold(m.clone()))?.residual_sup;
        let sol = solve_relative_hslag(&RelativeHslagProblem::new(&m, &equator)?)?;
        let history: Vec<String> = sol.history.iter().map(|r| format!("{r:.2e}")).collect();
        println!("amplitude {amplitude:e}: seed residual {before:.2e}");
        println!("  history [{}], condition {:.1}", history.join(", "), sol.condition);
        let coeffs: Vec<String> = sol.obstruction_coefficients.iter().map(|c| format!("{c:+.3e}")).collect();
        println!("  obstruction coefficients [{}], volume {:.10}", coeffs.join(", "), sol.volume);
    }
    Ok(())
}
