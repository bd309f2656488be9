//! Uniform tensor grids on `T^n = (R / 2 pi Z)^n`, trigonometric
//! differentiation and interpolation, and truncated real Fourier bases.

use nalgebra::{Complex, DMatrix};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub size: usize,
    diff: DMatrix<f64>,
}

impl Grid {
    pub fn new(n: usize, size: usize) -> Self {
        assert!(size >= 2 && size.is_multiple_of(2), "grid size must be even");
        let mut diff = DMatrix::zeros(size, size);
        for j in 0..size {
            for k in 0..size {
                if j != k {
                    let d = j as f64 - k as f64;
                    let sign = if (j + size - k).is_multiple_of(2) { 1.0 } else { -1.0 };
                    diff[(j, k)] = 0.5 * sign / (d * PI / size as f64).tan();
                }
            }
        }
        Grid { n, size, diff }
    }

    pub fn len(&self) -> usize {
        self.size.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.size as f64
    }

    /// Quadrature weight of each node (trapezoidal rule).
    pub fn weight(&self) -> f64 {
        self.spacing().powi(self.n as i32)
    }

    /// Multi-index of node `idx`, axis 0 fastest.
    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        (0..self.n)
            .map(|_| {
                let i = idx % self.size;
                idx /= self.size;
                i
            })
            .collect()
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx).into_iter().map(|i| i as f64 * self.spacing()).collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Spectral derivative along `axis` of a grid function.
    pub fn derivative(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let n = self.size;
        let stride = n.pow(axis as u32);
        let mut out = vec![0.0; f.len()];
        let mut line = vec![0.0; n];
        for base in 0..f.len() {
            if !(base / stride).is_multiple_of(n) {
                continue;
            }
            for (i, v) in line.iter_mut().enumerate() {
                *v = f[base + i * stride];
            }
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.diff[(j, k)] * line[k];
                }
                out[base + j * stride] = s;
            }
        }
        out
    }

    /// Removes every Fourier mode with some `|k_i| > max_mode`.
    pub fn band_limit(&self, f: &[f64], max_mode: usize) -> Vec<f64> {
        let n = self.size;
        let filter = DMatrix::from_fn(n, n, |j, l| {
            let d = 2.0 * PI * (j as f64 - l as f64) / n as f64;
            (1.0 + (1..=max_mode.min((n - 1) / 2)).map(|k| 2.0 * (k as f64 * d).cos()).sum::<f64>()) / n as f64
        });
        let mut out = f.to_vec();
        let mut line = vec![0.0; n];
        for axis in 0..self.n {
            let stride = n.pow(axis as u32);
            for base in 0..out.len() {
                if !(base / stride).is_multiple_of(n) {
                    continue;
                }
                for (i, v) in line.iter_mut().enumerate() {
                    *v = out[base + i * stride];
                }
                for j in 0..n {
                    out[base + j * stride] = (0..n).map(|k| filter[(j, k)] * line[k]).sum();
                }
            }
        }
        out
    }

    /// Trapezoidal integral of `f` against the density `w`.
    pub fn integrate(&self, f: &[f64], density: &[f64]) -> f64 {
        f.iter().zip(density).map(|(a, b)| a * b).sum::<f64>() * self.weight()
    }

    pub fn wavenumbers(&self) -> Vec<i64> {
        let n = self.size as i64;
        (0..n).map(|k| if k <= n / 2 { k } else { k - n }).collect()
    }
}

/// Products of axis phases for every coefficient, and their derivatives.
#[derive(Debug, Clone)]
pub struct Phases {
    value: Vec<Complex<f64>>,
    grad: Vec<Vec<Complex<f64>>>,
}

/// Trigonometric interpolant of a grid function, evaluable off the grid.
#[derive(Debug, Clone)]
pub struct TrigInterpolant {
    n: usize,
    size: usize,
    coeffs: Vec<Complex<f64>>,
}

impl TrigInterpolant {
    pub fn new(grid: &Grid, values: &[f64]) -> Self {
        let size = grid.size;
        let mut coeffs: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        // separable DFT, normalized so that f = sum c_k e^{i k theta}
        let mut line = vec![Complex::new(0.0, 0.0); size];
        for axis in 0..grid.n {
            let stride = size.pow(axis as u32);
            for base in 0..coeffs.len() {
                if !(base / stride).is_multiple_of(size) {
                    continue;
                }
                for k in 0..size {
                    let mut s = Complex::new(0.0, 0.0);
                    for j in 0..size {
                        let ang = -2.0 * PI * (k * j) as f64 / size as f64;
                        s += coeffs[base + j * stride] * Complex::new(ang.cos(), ang.sin());
                    }
                    line[k] = s / size as f64;
                }
                for k in 0..size {
                    coeffs[base + k * stride] = line[k];
                }
            }
        }
        TrigInterpolant { n: grid.n, size, coeffs }
    }

    fn axis_basis(&self, theta: f64) -> (Vec<Complex<f64>>, Vec<Complex<f64>>) {
        let size = self.size as i64;
        let mut b = Vec::with_capacity(self.size);
        let mut db = Vec::with_capacity(self.size);
        for k in 0..size {
            let w = if k <= size / 2 { k } else { k - size };
            if k == size / 2 {
                // Nyquist mode interpolated as a cosine
                let a = w as f64 * theta;
                b.push(Complex::new(a.cos(), 0.0));
                db.push(Complex::new(-(w as f64) * a.sin(), 0.0));
            } else {
                let a = w as f64 * theta;
                let e = Complex::new(a.cos(), a.sin());
                b.push(e);
                db.push(e * Complex::new(0.0, w as f64));
            }
        }
        (b, db)
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.eval_with_gradient(theta).0
    }

    /// Value and gradient at an arbitrary point.
    pub fn eval_with_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        self.eval_phases(&self.phases(theta))
    }

    /// Phase factors at `theta`, shareable among interpolants on the same grid.
    pub fn phases(&self, theta: &[f64]) -> Phases {
        let bases: Vec<_> = theta.iter().map(|&t| self.axis_basis(t)).collect();
        let total = self.coeffs.len();
        let mut value = vec![Complex::new(1.0, 0.0); total];
        let mut grad = vec![vec![Complex::new(1.0, 0.0); total]; self.n];
        for (idx, v) in value.iter_mut().enumerate() {
            let mut rest = idx;
            for a in 0..self.n {
                let k = rest % self.size;
                rest /= self.size;
                *v *= bases[a].0[k];
                for (b, g) in grad.iter_mut().enumerate() {
                    g[idx] *= if a == b { bases[a].1[k] } else { bases[a].0[k] };
                }
            }
        }
        Phases { value, grad }
    }

    pub fn eval_phases(&self, ph: &Phases) -> (f64, Vec<f64>) {
        let val = self.coeffs.iter().zip(&ph.value).map(|(c, p)| c.re * p.re - c.im * p.im).sum();
        let grad = ph
            .grad
            .iter()
            .map(|g| self.coeffs.iter().zip(g).map(|(c, p)| c.re * p.re - c.im * p.im).sum())
            .collect();
        (val, grad)
    }

    /// Complex Fourier coefficients, axis 0 fastest, wavenumber order `0..N`.
    pub fn coefficients(&self) -> &[Complex<f64>] {
        &self.coeffs
    }
}

/// Truncated real Fourier basis `{1, cos<xi,theta>, sin<xi,theta>}` over
/// `|xi|_inf <= m`, one representative per `+-xi` pair.
#[derive(Debug, Clone)]
pub struct FourierBasis {
    pub n: usize,
    pub max_mode: usize,
    /// Wave vector and kind (`false` = cosine, `true` = sine) per element.
    pub elements: Vec<(Vec<i64>, bool)>,
}

impl FourierBasis {
    pub fn new(n: usize, max_mode: usize) -> Self {
        let m = max_mode as i64;
        let side = 2 * m + 1;
        let mut modes: Vec<Vec<i64>> = Vec::new();
        for idx in 0..side.pow(n as u32) {
            let mut rest = idx;
            let xi: Vec<i64> = (0..n)
                .map(|_| {
                    let v = rest % side - m;
                    rest /= side;
                    v
                })
                .collect();
            let first = xi.iter().rev().find(|&&v| v != 0);
            if matches!(first, Some(&v) if v > 0) {
                modes.push(xi);
            }
        }
        modes.sort_by_key(|xi| (xi.iter().map(|v| v * v).sum::<i64>(), xi.iter().map(|v| v.abs()).max(), xi.clone()));
        let mut elements = vec![(vec![0; n], false)];
        for xi in modes {
            elements.push((xi.clone(), false));
            elements.push((xi, true));
        }
        FourierBasis { n, max_mode, elements }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn eval(&self, i: usize, theta: &[f64]) -> f64 {
        let (xi, sine) = &self.elements[i];
        let a: f64 = xi.iter().zip(theta).map(|(k, t)| *k as f64 * t).sum();
        if *sine {
            a.sin()
        } else {
            a.cos()
        }
    }

    /// Matrix with one column per basis element, rows indexed by grid nodes.
    pub fn on_grid(&self, grid: &Grid) -> DMatrix<f64> {
        let nodes = grid.nodes();
        DMatrix::from_fn(grid.len(), self.len(), |r, c| self.eval(c, &nodes[r]))
    }

    pub fn label(&self, i: usize) -> String {
        let (xi, sine) = &self.elements[i];
        if xi.iter().all(|&v| v == 0) {
            return "1".into();
        }
        format!("{}{:?}", if *sine { "sin" } else { "cos" }, xi)
    }
}
