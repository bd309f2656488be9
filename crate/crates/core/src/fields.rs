//! Scalar fields on chart coordinates.

use nalgebra::DMatrix;
use std::fmt;
use std::sync::Arc;

/// A smooth function of chart coordinates. Gradients and Hessians default to
/// fourth-order central differences; implementors override them when a closed
/// form is cheap.
pub trait ScalarField: Send + Sync {
    fn value(&self, p: &[f64]) -> f64;

    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let h = 1e-3;
        let mut q = p.to_vec();
        (0..p.len())
            .map(|i| {
                let x = p[i];
                let mut at = |s: f64| {
                    q[i] = x + s * h;
                    let v = self.value(&q);
                    q[i] = x;
                    v
                };
                (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
            })
            .collect()
    }

    fn hessian(&self, p: &[f64]) -> DMatrix<f64> {
        let d = p.len();
        let h = 1e-3;
        let mut out = DMatrix::zeros(d, d);
        let mut q = p.to_vec();
        for i in 0..d {
            let x = p[i];
            let mut at = |s: f64| {
                q[i] = x + s * h;
                let v = self.gradient(&q);
                q[i] = x;
                v
            };
            let (a, b, c, e) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
            for j in 0..d {
                out[(i, j)] = (-a[j] + 8.0 * b[j] - 8.0 * c[j] + e[j]) / (12.0 * h);
            }
        }
        (&out + out.transpose()) * 0.5
    }
}

pub type Field = Arc<dyn ScalarField>;

impl fmt::Debug for dyn ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl ScalarField for Constant {
    fn value(&self, _p: &[f64]) -> f64 {
        self.0
    }
    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        vec![0.0; p.len()]
    }
    fn hessian(&self, p: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(p.len(), p.len())
    }
}

/// Affine function `c + a·p`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub constant: f64,
    pub linear: Vec<f64>,
}

impl Affine {
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut linear = vec![0.0; dim];
        linear[i] = 1.0;
        Affine { constant: 0.0, linear }
    }
}

impl ScalarField for Affine {
    fn value(&self, p: &[f64]) -> f64 {
        self.constant + self.linear.iter().zip(p).map(|(a, x)| a * x).sum::<f64>()
    }
    fn gradient(&self, _p: &[f64]) -> Vec<f64> {
        self.linear.clone()
    }
    fn hessian(&self, p: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(p.len(), p.len())
    }
}

/// Closure-backed field with numerical derivatives.
pub struct FnField<F: Fn(&[f64]) -> f64 + Send + Sync>(pub F);

impl<F: Fn(&[f64]) -> f64 + Send + Sync> ScalarField for FnField<F> {
    fn value(&self, p: &[f64]) -> f64 {
        (self.0)(p)
    }
}

/// Finite linear combination of fields.
#[derive(Clone)]
pub struct Combination(pub Vec<(f64, Field)>);

impl ScalarField for Combination {
    fn value(&self, p: &[f64]) -> f64 {
        self.0.iter().map(|(c, f)| c * f.value(p)).sum()
    }
    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; p.len()];
        for (c, f) in &self.0 {
            if *c == 0.0 {
                continue;
            }
            for (gi, fi) in g.iter_mut().zip(f.gradient(p)) {
                *gi += c * fi;
            }
        }
        g
    }
    fn hessian(&self, p: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(p.len(), p.len());
        for (c, f) in &self.0 {
            if *c != 0.0 {
                h += f.hessian(p) * *c;
            }
        }
        h
    }
}

/// Scaled copy of a field.
pub fn scaled(c: f64, f: Field) -> Field {
    Arc::new(Combination(vec![(c, f)]))
}
