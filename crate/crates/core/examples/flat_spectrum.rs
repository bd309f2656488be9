//! The stability operator of a linear torus in flat T^4 is diagonal in Fourier
//! modes with entries |xi|^4.

use hslag::jacobi::{assemble_box, rigidity_check, spectrum};
use hslag::kahler::ChartedManifold;
use hslag::lagrangian::mean_curvature;
use hslag::toric::fiber_in_action_angle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let linear = fiber_in_action_angle(ChartedManifold::flat(2), &[1.0, 2.0], 16);
    let op = assemble_box(&linear, Some(2))?;
    let spectral = spectrum(&op, None)?;
    let rig = rigidity_check(&linear, &op, &spectral)?;
    println!("linear torus: residual {:.1e}, kernel {}, rigid {}", mean_curvature(&linear)?.residual_sup, spectral.kernel_dimension, rig.rigid);
    for (i, (xi, sine)) in op.basis.elements.iter().enumerate().step_by(3) {
        let norm2: i64 = xi.iter().map(|k| k * k).sum();
        let kind = if *sine { "sin" } else { "cos" };
        println!("  {kind} {xi:?}: diagonal {:.10}, |xi|^4 = {}", op.matrix[(i, i)], norm2 * norm2);
    }
    println!("  asymmetry {:.1e}", op.asymmetry());
    Ok(())
}
