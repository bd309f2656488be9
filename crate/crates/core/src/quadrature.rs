//! Gauss-Legendre rules.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights on `[-1, 1]` (Golub-Welsch).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut t = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        t[(k, k - 1)] = b;
        t[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(t);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(6);
        let quad = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((quad(0) - 2.0).abs() < 1e-14);
        assert!((quad(10) - 2.0 / 11.0).abs() < 1e-14);
        assert!(quad(7).abs() < 1e-14);
    }
}
