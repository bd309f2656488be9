//! Delzant validation and the Guillemin metric of a few labelled polytopes.

use hslag::toric::{guillemin_metric, validate_delzant, LabelledPolytope};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let polytopes = [
        ("simplex", LabelledPolytope::simplex(2)),
        ("rectangle", LabelledPolytope::cube(&[1.0, 2.0])),
        ("Hirzebruch", LabelledPolytope::new(vec![vec![1, 0], vec![0, 1], vec![0, -1], vec![-1, -1]], vec![0.0, 0.0, 1.0, 2.0])),
        ("weighted triangle", LabelledPolytope::new(vec![vec![1, 0], vec![0, 1], vec![-1, -2]], vec![0.0, 0.0, 1.0])),
    ];
    for (name, p) in &polytopes {
        match validate_delzant(p) {
            Ok(rep) => {
                println!("{name}: {} vertices, Delzant", rep.vertices.len());
                let x = p.barycenter()?;
                let g = guillemin_metric(p, &x)?;
                let eig = g.hessian.clone().symmetric_eigenvalues();
                println!("  barycenter {x:.4?}, potential Hessian eigenvalues {:.4?}", eig.as_slice());
            }
            Err(e) => println!("{name}: rejected with {} ({e})", e.code()),
        }
    }
    // round trip through the text format
    let text = polytopes[2].1.to_text();
    let back = LabelledPolytope::parse(&text)?;
    println!("text format:\n{text}parsed back with {} facets", back.normals.len());
    Ok(())
}
