//! First and second variation of volume against finite differences on a bent equator.

use hslag::jacobi::assemble_box;
use hslag::kahler::{ChartedManifold, CpChart};
use hslag::lagrangian::{deform_by, first_variation_of, mean_curvature, second_variation_fd};
use hslag::toric::fiber_in_action_angle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let eq = fiber_in_action_angle(ChartedManifold::projective(1, CpChart::ActionAngle), &[0.5], 32);
    let bend: Vec<f64> = eq.grid.nodes().iter().map(|t| 0.003 * (2.0 * t[0]).cos() + 0.002 * (3.0 * t[0] + 0.4).sin()).collect();
    let bent = deform_by(&eq, &bend)?;
    println!("bent equator: residual sup {:.3e}", mean_curvature(&bent)?.residual_sup);
    for (k, phase) in [(2.0, 0.0), (3.0, 1.0), (2.0, 0.7)] {
        let f: Vec<f64> = bent.grid.nodes().iter().map(|t| (k * t[0] + phase).cos()).collect();
        let r = first_variation_of(&bent, &f, 1e-4)?;
        println!("  first variation along cos({k} t + {phase}): fd {:+.8e}, formula {:+.8e}, rel {:.1e}", r.finite_difference, r.predicted, r.relative_error);
    }
    let op = assemble_box(&eq, Some(6))?;
    for j in [0, 3, 7] {
        let mut c = vec![0.0; op.len()];
        c[j] = 1.0;
        c[(j + 5) % op.len()] = 0.5;
        let u = op.synthesize(&c);
        let scale = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let u: Vec<f64> = u.iter().map(|v| v / scale).collect();
        let c: Vec<f64> = c.iter().map(|v| v / scale).collect();
        let q = op.quadratic_form(&c);
        let fd = second_variation_fd(&eq, &u, 1e-3)?;
        println!("  second variation: fd {fd:.8}, <Box u, u> {q:.8}");
    }
    Ok(())
}
