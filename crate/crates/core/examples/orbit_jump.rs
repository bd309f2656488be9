//! A small tilted ellipsoidal perturbation of the round sphere whose best orbit
//! representative of the equator sits far from the identity.

use hslag::deform::{curvature_spread, minimize_over_orbit, perturbation_size, MinimizeOptions, OrbitProblem, SurfaceStructure};
use hslag::kahler::{ChartedManifold, Surface};
use hslag::toric::fiber_in_action_angle;
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sphere = ChartedManifold::sphere();
    let surface = Surface::tilted([0.985, 1.0, 1.015], [0.0, 1.0, 0.0], 0.4);
    let m = sphere.clone().with_perturbation(Arc::new(SurfaceStructure(surface)));
    let samples: Vec<Vec<f64>> = (0..400).map(|k| vec![-0.95 + 1.9 * ((k * 37 % 400) as f64 + 0.5) / 400.0, k as f64 * 0.7]).collect();
    println!("perturbation size {:.4}", perturbation_size(&m, &samples)?);
    let equator = fiber_in_action_angle(sphere, &[0.0], 32);
    let problem = OrbitProblem::new(&m, &equator)?;
    println!("orbit directions {:?}", problem.names);
    let min = minimize_over_orbit(&problem, &[0.0, 0.0], &MinimizeOptions::default())?;
    let distance = min.params.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("minimizer {:.5?} at distance {distance:.4} after {} iterations", min.params, min.iterations);
    let history: Vec<String> = min.gradient_history.iter().map(|g| format!("{g:.2e}")).collect();
    println!("gradient history [{}]", history.join(", "));
    println!("Hessian eigenvalues {:.5?}, nondegenerate {}", min.hessian_eigenvalues, min.nondegenerate);
    println!("stationarity residual {:.2e}", min.hslag_residual);
    let spread = curvature_spread(&min.solution.immersion)?;
    println!("geodesic curvature in [{:.6}, {:.6}], relative spread {:.1e}", spread.min, spread.max, spread.relative);
    Ok(())
}
