//! Circle reduction of C^2 onto CP^1: the orbit length over a level set and the
//! volume factor between a fiber and its preimage torus.

use hslag::kahler::{ChartedManifold, CpChart};
use hslag::lagrangian::volume;
use hslag::toric::{fiber_in_action_angle, reduction_volume_factor};
use nalgebra::{Complex, DMatrix};
use std::f64::consts::PI;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let diagonal = DMatrix::from_row_slice(2, 1, &[1i64, 1]);
    let radius = 2f64.sqrt();
    let samples: Vec<Vec<Complex<f64>>> = (0..24)
        .map(|k| {
            let a = 0.1 + 1.4 * k as f64 / 24.0;
            let (b, c) = (0.7 * k as f64, 1.3 * k as f64);
            vec![Complex::from_polar(radius * a.cos(), b), Complex::from_polar(radius * a.sin(), c)]
        })
        .collect();
    let red = reduction_volume_factor(&diagonal, &samples)?;
    println!("orbit length {:.12} (2 pi sqrt 2 = {:.12}), spread {:.1e}", red.kappa, 2.0 * PI * radius, red.relative_spread);
    for x in [0.2, 0.5, 0.9] {
        let base = volume(&fiber_in_action_angle(ChartedManifold::projective(1, CpChart::ActionAngle), &[x], 32))?;
        let lifted = (2.0 * PI) * (2.0 * (1.0 - x)).sqrt() * (2.0 * PI) * (2.0 * x).sqrt();
        println!("  fiber {x}: length {base:.10}, kappa * length {:.10}, preimage area {lifted:.10}", red.kappa * base);
    }
    Ok(())
}
