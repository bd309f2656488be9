//! Stationarity, stability spectrum and rigidity of the barycentric fibers of CP^1 and CP^2.

use hslag::jacobi::{assemble_box, rigidity_check, spectrum, stability_check};
use hslag::lagrangian::{mean_curvature, volume};
use hslag::toric::{moment_fiber, LabelledPolytope};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (n, grid) in [(1, 32), (2, 16)] {
        let p = LabelledPolytope::simplex(n);
        let l = moment_fiber(&p, &p.barycenter()?, grid)?;
        let mc = mean_curvature(&l)?;
        let op = assemble_box(&l, None)?;
        let spectral = spectrum(&op, None)?;
        let rig = rigidity_check(&l, &op, &spectral)?;
        let stab = stability_check(&spectral);
        println!("CP^{n} Clifford torus on a {grid}^{n} grid");
        println!("  volume {:.10}, residual sup {:.1e}", volume(&l)?, mc.residual_sup);
        println!("  lowest eigenvalues {:.6?}", &spectral.eigenvalues[..spectral.eigenvalues.len().min(10)]);
        println!("  kernel {}, Killing restriction rank {}, rigid {}", spectral.kernel_dimension, rig.rank, rig.rigid);
        println!("  stable {} with spectral gap {:.6}", stab.stable, stab.margin);
    }
    Ok(())
}
