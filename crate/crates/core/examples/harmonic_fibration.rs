//! Harmonic 1-forms on a CP^2 moment fiber and the Lagrangian family they
//! generate, which sweeps out nearby moment fibers.

use hslag::lagrangian::{fibration_seed, harmonic_one_forms, mean_curvature, TorusImmersion};
use hslag::toric::{moment_fiber, LabelledPolytope};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let simplex = LabelledPolytope::simplex(2);
    let x0 = [0.3, 0.25];
    let fiber = moment_fiber(&simplex, &x0, 12)?;
    let forms = harmonic_one_forms(&fiber)?;
    println!("harmonic forms: nonvanishing {}, min norms {:.5?}, residual {:.1e}", forms.nonvanishing, forms.min_norms, forms.residual);
    let params = vec![vec![0.0, 0.0], vec![0.05, 0.0], vec![0.0, 0.05], vec![-0.04, 0.03]];
    for member in fibration_seed(&fiber, &params, 0.1)? {
        let target = moment_fiber(&simplex, &[x0[0] + member.t[0], x0[1] + member.t[1]], 12)?;
        println!(
            "  t = {:+.2?}: distance to the moment fiber {:.1e}, residual {:.1e}",
            member.t,
            member.immersion.distance(&target),
            mean_curvature(&member.immersion)?.residual_sup
        );
    }
    let json = fiber.to_json();
    let back = TorusImmersion::from_json(&json)?;
    println!("snapshot round trip: {} bytes, distance {:.1e}", json.len(), back.distance(&fiber));
    Ok(())
}
