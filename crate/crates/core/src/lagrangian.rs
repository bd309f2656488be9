//! Lagrangian tori sampled on uniform grids: induced geometry, mean curvature
//! and Maslov form, Hamiltonian deformations, harmonic forms, and snapshots.

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::kahler::{eval_tensors_with, hamiltonian_flow, Backend, ChartedManifold, Mat, TensorEval};
use crate::spectral::{FourierBasis, Grid, TrigInterpolant};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_LAGRANGIAN_TOL: f64 = 1e-8;

/// Default grid size per axis for fiber dimension `n`.
pub fn default_grid(n: usize) -> usize {
    if n <= 2 {
        32
    } else {
        16
    }
}

/// A map `T^n -> M` sampled on an `N^n` grid. Chart values are stored unwrapped:
/// `value(theta) = winding * theta + periodic(theta)`.
#[derive(Debug, Clone)]
pub struct TorusImmersion {
    pub manifold: ChartedManifold,
    pub n: usize,
    pub grid: Grid,
    pub values: Vec<Vec<f64>>,
    pub winding: DMatrix<f64>,
}

impl TorusImmersion {
    /// Builds from the periodic part `theta -> periodic(theta)`.
    pub fn from_fn(
        manifold: ChartedManifold,
        n: usize,
        size: usize,
        winding: DMatrix<f64>,
        periodic: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Self {
        let grid = Grid::new(n, size);
        let values = grid
            .nodes()
            .iter()
            .map(|t| {
                let mut v = periodic(t);
                for (i, vi) in v.iter_mut().enumerate() {
                    *vi += (0..n).map(|a| winding[(i, a)] * t[a]).sum::<f64>();
                }
                v
            })
            .collect();
        TorusImmersion { manifold, n, grid, values, winding }
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn with_manifold(&self, manifold: ChartedManifold) -> Self {
        TorusImmersion { manifold, ..self.clone() }
    }

    fn linear_part(&self, theta: &[f64], i: usize) -> f64 {
        (0..self.n).map(|a| self.winding[(i, a)] * theta[a]).sum()
    }

    /// Periodic part of each chart coordinate as grid functions.
    pub fn periodic_parts(&self) -> Vec<Vec<f64>> {
        let nodes = self.grid.nodes();
        (0..self.dim())
            .map(|i| self.values.iter().zip(&nodes).map(|(v, t)| v[i] - self.linear_part(t, i)).collect())
            .collect()
    }

    pub fn interpolants(&self) -> Vec<TrigInterpolant> {
        self.periodic_parts().iter().map(|f| TrigInterpolant::new(&self.grid, f)).collect()
    }

    /// Chart point at an arbitrary parameter.
    pub fn eval(&self, theta: &[f64]) -> Vec<f64> {
        self.interpolants().iter().enumerate().map(|(i, it)| it.eval(theta) + self.linear_part(theta, i)).collect()
    }

    /// `d ell / d theta_a` per node as `2n x n` matrices.
    pub fn tangents(&self) -> Vec<Mat> {
        let parts = self.periodic_parts();
        let d = self.dim();
        let derivs: Vec<Vec<Vec<f64>>> =
            parts.iter().map(|f| (0..self.n).map(|a| self.grid.derivative(f, a)).collect()).collect();
        (0..self.grid.len())
            .map(|k| Mat::from_fn(d, self.n, |i, a| self.winding[(i, a)] + derivs[i][a][k]))
            .collect()
    }

    /// `d^2 ell / d theta_a d theta_b` per node, `[a][b]` of length `2n`.
    fn second_derivatives(&self) -> Vec<Vec<Vec<DVector<f64>>>> {
        let parts = self.periodic_parts();
        let n = self.n;
        let d = self.dim();
        let mut dd = vec![vec![vec![vec![0.0; self.grid.len()]; n]; n]; d];
        for i in 0..d {
            for a in 0..n {
                let first = self.grid.derivative(&parts[i], a);
                for b in 0..n {
                    dd[i][a][b] = self.grid.derivative(&first, b);
                }
            }
        }
        (0..self.grid.len())
            .map(|k| {
                (0..n)
                    .map(|a| (0..n).map(|b| DVector::from_fn(d, |i, _| 0.5 * (dd[i][a][b][k] + dd[i][b][a][k]))).collect())
                    .collect()
            })
            .collect()
    }

    /// Image under the time-`t` flow of the Hamiltonian vector field of `v`.
    pub fn transported(&self, v: &dyn ScalarField, t: f64, steps: usize) -> Result<Self> {
        let values: Result<Vec<Vec<f64>>> =
            self.values.par_iter().map(|p| hamiltonian_flow(&self.manifold, v, t, p, steps)).collect();
        Ok(TorusImmersion { values: values?, ..self.clone() })
    }

    /// `ell o psi` for a diffeomorphism `psi` of the torus homotopic to the identity.
    pub fn reparametrized(&self, psi: impl Fn(&[f64]) -> Vec<f64> + Sync) -> Self {
        let its = self.interpolants();
        let values = self
            .grid
            .nodes()
            .par_iter()
            .map(|t| {
                let s = psi(t);
                let ph = its[0].phases(&s);
                its.iter().enumerate().map(|(i, it)| it.eval_phases(&ph).0 + self.linear_part(&s, i)).collect()
            })
            .collect();
        TorusImmersion { values, ..self.clone() }
    }

    /// Grid function of an ambient field restricted to the immersion.
    pub fn restrict(&self, v: &dyn ScalarField) -> Vec<f64> {
        self.values.iter().map(|p| v.value(p)).collect()
    }

    /// Max norm of the difference of node values.
    pub fn distance(&self, other: &TorusImmersion) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Same map sampled on a grid of a different size (spectral resampling).
    pub fn resampled(&self, size: usize) -> Self {
        let its = self.interpolants();
        let grid = Grid::new(self.n, size);
        let values = grid
            .nodes()
            .iter()
            .map(|t| its.iter().enumerate().map(|(i, it)| it.eval(t) + self.linear_part(t, i)).collect())
            .collect();
        TorusImmersion { grid, values, ..self.clone() }
    }
}

/// Per-node geometric data.
#[derive(Debug, Clone)]
pub struct NodeGeometry {
    pub ambient: TensorEval,
    /// `d ell`, `2n x n`.
    pub tangent: Mat,
    pub metric: Mat,
    pub inverse: Mat,
    pub sqrt_det: f64,
    /// `B(d_a, d_b)` as chart vectors.
    pub second_fundamental: Vec<Vec<DVector<f64>>>,
    pub mean_curvature: DVector<f64>,
}

/// Induced metric, volume form and the Christoffel symbols of `g_L`.
#[derive(Debug, Clone)]
pub struct InducedGeometry {
    pub metric: Vec<Mat>,
    pub sqrt_det: Vec<f64>,
    /// `christoffel[node][c][(a, b)]`.
    pub christoffel: Vec<Vec<Mat>>,
    pub volume: f64,
}

/// Mean curvature, Maslov form and the Euler-Lagrange residual `d* alpha_H`.
#[derive(Debug, Clone, Serialize)]
pub struct MaslovData {
    pub h: Vec<Vec<f64>>,
    pub alpha_h: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
    pub volume: f64,
    pub residual_sup: f64,
    pub residual_l2: f64,
    /// `int d* alpha_H` against the volume form.
    pub residual_integral: f64,
    pub lagrangian_defect: f64,
}

/// All geometry of an immersion needed downstream.
#[derive(Debug, Clone)]
pub struct ImmersionGeometry {
    pub nodes: Vec<NodeGeometry>,
    pub maslov: MaslovData,
}

impl ImmersionGeometry {
    pub fn sqrt_det(&self) -> Vec<f64> {
        self.nodes.iter().map(|g| g.sqrt_det).collect()
    }
}

/// `d* beta = -(1/sqrt g) d_a (sqrt g g^{ab} beta_b)` on the grid.
pub fn codifferential(grid: &Grid, nodes: &[NodeGeometry], beta: &[Vec<f64>]) -> Vec<f64> {
    let n = grid.n;
    let mut acc = vec![0.0; grid.len()];
    for a in 0..n {
        let flux: Vec<f64> = nodes
            .iter()
            .zip(beta)
            .map(|(g, b)| g.sqrt_det * (0..n).map(|c| g.inverse[(a, c)] * b[c]).sum::<f64>())
            .collect();
        for (s, v) in acc.iter_mut().zip(grid.derivative(&flux, a)) {
            *s += v;
        }
    }
    acc.iter().zip(nodes).map(|(s, g)| -s / g.sqrt_det).collect()
}

/// Differential of a grid function, per node `n` components.
pub fn differential(grid: &Grid, u: &[f64]) -> Vec<Vec<f64>> {
    let d: Vec<Vec<f64>> = (0..grid.n).map(|a| grid.derivative(u, a)).collect();
    (0..grid.len()).map(|k| d.iter().map(|da| da[k]).collect()).collect()
}

/// `Delta u = d* d u`.
pub fn laplacian(grid: &Grid, nodes: &[NodeGeometry], u: &[f64]) -> Vec<f64> {
    codifferential(grid, nodes, &differential(grid, u))
}

fn lagrangian_defect(t: &TensorEval, e: &Mat) -> f64 {
    let w = e.transpose() * &t.omega * e;
    w.amax()
}

/// Geometry at every node. `with_ricci` also evaluates the ambient Ricci tensor.
pub fn immersion_geometry(l: &TorusImmersion, with_ricci: bool) -> Result<ImmersionGeometry> {
    let tangents = l.tangents();
    let seconds = l.second_derivatives();
    let m = &l.manifold;
    let n = l.n;
    let d = l.dim();
    let nodes: Result<Vec<NodeGeometry>> = (0..l.grid.len())
        .into_par_iter()
        .map(|k| {
            let p = &l.values[k];
            let t = eval_tensors_with(m, p, m.fd_step, with_ricci)?;
            let e = tangents[k].clone();
            let metric = e.transpose() * &t.metric * &e;
            let det = metric.determinant();
            if !(det > 0.0) || metric.clone().symmetric_eigenvalues().min() < 1e-10 {
                return Err(Error::DegenerateInducedMetric { node: k });
            }
            let inverse = metric.clone().try_inverse().ok_or(Error::DegenerateInducedMetric { node: k })?;
            let proj_t = &e * &inverse * e.transpose() * &t.metric;
            let proj_n = Mat::identity(d, d) - proj_t;
            let mut bff = vec![vec![DVector::zeros(d); n]; n];
            let mut h = DVector::zeros(d);
            for a in 0..n {
                for b in 0..n {
                    let mut s = seconds[k][a][b].clone();
                    for c in 0..d {
                        let mut v = 0.0;
                        for i in 0..d {
                            for j in 0..d {
                                v += t.christoffel[c][(i, j)] * e[(i, a)] * e[(j, b)];
                            }
                        }
                        s[c] += v;
                    }
                    let bab = &proj_n * s;
                    h += &bab * inverse[(a, b)];
                    bff[a][b] = bab;
                }
            }
            Ok(NodeGeometry {
                ambient: t,
                tangent: e,
                metric,
                inverse,
                sqrt_det: det.sqrt(),
                second_fundamental: bff,
                mean_curvature: h,
            })
        })
        .collect();
    let nodes = nodes?;
    let alpha: Vec<Vec<f64>> = nodes
        .iter()
        .map(|g| (0..n).map(|a| (g.mean_curvature.transpose() * &g.ambient.omega * g.tangent.column(a))[0]).collect())
        .collect();
    let residual = codifferential(&l.grid, &nodes, &alpha);
    let sq: Vec<f64> = nodes.iter().map(|g| g.sqrt_det).collect();
    let volume = l.grid.integrate(&vec![1.0; sq.len()], &sq);
    let sup = residual.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let l2 = l.grid.integrate(&residual.iter().map(|r| r * r).collect::<Vec<_>>(), &sq).sqrt();
    let integral = l.grid.integrate(&residual, &sq);
    let defect = nodes.iter().map(|g| lagrangian_defect(&g.ambient, &g.tangent)).fold(0.0, f64::max);
    let maslov = MaslovData {
        h: nodes.iter().map(|g| g.mean_curvature.iter().copied().collect()).collect(),
        alpha_h: alpha,
        residual,
        volume,
        residual_sup: sup,
        residual_l2: l2,
        residual_integral: integral,
        lagrangian_defect: defect,
    };
    Ok(ImmersionGeometry { nodes, maslov })
}

/// Induced metric `g_L = (d ell)^T g (d ell)`, volume form and Christoffel symbols.
pub fn induced_geometry(l: &TorusImmersion) -> Result<InducedGeometry> {
    let tangents = l.tangents();
    let n = l.n;
    let metric: Result<Vec<Mat>> = l
        .values
        .par_iter()
        .zip(&tangents)
        .enumerate()
        .map(|(k, (p, e))| {
            let g = l.manifold.metric(p)?;
            let gl = e.transpose() * g * e;
            if !(gl.determinant() > 0.0) || gl.clone().symmetric_eigenvalues().min() < 1e-10 {
                return Err(Error::DegenerateInducedMetric { node: k });
            }
            Ok(gl)
        })
        .collect();
    let metric = metric?;
    let sqrt_det: Vec<f64> = metric.iter().map(|g| g.determinant().sqrt()).collect();
    let volume = l.grid.integrate(&vec![1.0; sqrt_det.len()], &sqrt_det);
    // derivatives of g_L entries
    let mut dg = vec![vec![vec![vec![0.0; l.grid.len()]; n]; n]; n]; // [c][a][b][node]
    for a in 0..n {
        for b in 0..n {
            let f: Vec<f64> = metric.iter().map(|g| g[(a, b)]).collect();
            for c in 0..n {
                dg[c][a][b] = l.grid.derivative(&f, c);
            }
        }
    }
    let christoffel = (0..l.grid.len())
        .map(|k| {
            let inv = metric[k].clone().try_inverse().unwrap();
            (0..n)
                .map(|c| {
                    Mat::from_fn(n, n, |a, b| {
                        (0..n)
                            .map(|e| 0.5 * inv[(c, e)] * (dg[a][b][e][k] + dg[b][a][e][k] - dg[e][a][b][k]))
                            .sum()
                    })
                })
                .collect()
        })
        .collect();
    Ok(InducedGeometry { metric, sqrt_det, christoffel, volume })
}

/// Volume of the immersion.
pub fn volume(l: &TorusImmersion) -> Result<f64> {
    Ok(induced_geometry(l)?.volume)
}

pub fn mean_curvature(l: &TorusImmersion) -> Result<MaslovData> {
    Ok(immersion_geometry(l, false)?.maslov)
}

/// Residual field `d* alpha_H` with its norms.
#[derive(Debug, Clone, Serialize)]
pub struct Residual {
    pub field: Vec<f64>,
    pub sup: f64,
    pub l2: f64,
    pub integral: f64,
}

pub fn hslag_residual(l: &TorusImmersion) -> Result<Residual> {
    let m = mean_curvature(l)?;
    Ok(Residual { field: m.residual, sup: m.residual_sup, l2: m.residual_l2, integral: m.residual_integral })
}

/// Hamiltonian deformation data: potential on `L` and the ambient extension.
#[derive(Debug, Clone)]
pub struct HamiltonianDeformation {
    pub f: Vec<f64>,
    /// Cutoff radius; `None` picks half the focal-radius estimate.
    pub radius: Option<f64>,
    pub flow_steps: usize,
}

impl HamiltonianDeformation {
    pub fn new(f: Vec<f64>) -> Self {
        HamiltonianDeformation { f, radius: None, flow_steps: 4 }
    }
}

/// `1` on `[0, 1/2]`, quintic smoothstep down to `0` on `[1/2, 1]`.
fn cutoff(t: f64) -> (f64, f64) {
    if t <= 0.5 {
        (1.0, 0.0)
    } else if t >= 1.0 {
        (0.0, 0.0)
    } else {
        let s = 2.0 * (t - 0.5);
        let v = 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        let dv = -30.0 * s * s * (1.0 - s) * (1.0 - s) * 2.0;
        (v, dv)
    }
}

/// Tubular coordinates `q = ell(theta) + s_a N_a(theta)` with `N_a = J d_a ell`,
/// used to extend functions on `L` to a neighborhood.
pub(crate) struct Tube {
    n: usize,
    d: usize,
    winding: DMatrix<f64>,
    position: Vec<TrigInterpolant>,
    normals: Vec<TrigInterpolant>, // index i + d * a
    gram: Vec<TrigInterpolant>,    // index a + n * b
    f: TrigInterpolant,
    pub(crate) radius: f64,
}

pub(crate) struct TubePoint {
    pub(crate) theta: Vec<f64>,
    pub(crate) s: Vec<f64>,
    jac: Mat,
}

impl TubePoint {
    pub(crate) fn at(theta: Vec<f64>) -> Self {
        let n = theta.len();
        TubePoint { theta, s: vec![0.0; n], jac: Mat::zeros(0, 0) }
    }
}

impl Tube {
    pub(crate) fn new(l: &TorusImmersion, geom: &ImmersionGeometry, f: &[f64], radius: f64) -> Self {
        let n = l.n;
        let d = l.dim();
        let mut normals = Vec::with_capacity(d * n);
        for a in 0..n {
            let col: Vec<Vec<f64>> =
                geom.nodes.iter().map(|g| (&g.ambient.acs * g.tangent.column(a)).iter().copied().collect()).collect();
            for i in 0..d {
                let vals: Vec<f64> = col.iter().map(|v| v[i]).collect();
                normals.push(TrigInterpolant::new(&l.grid, &vals));
            }
        }
        // reorder to i + d * a
        let mut ordered = Vec::with_capacity(d * n);
        for a in 0..n {
            for i in 0..d {
                ordered.push(normals[a * d + i].clone());
            }
        }
        let mut gram = Vec::with_capacity(n * n);
        for b in 0..n {
            for a in 0..n {
                let vals: Vec<f64> = geom.nodes.iter().map(|g| g.metric[(a, b)]).collect();
                gram.push(TrigInterpolant::new(&l.grid, &vals));
            }
        }
        Tube {
            n,
            d,
            winding: l.winding.clone(),
            position: l.interpolants(),
            normals: ordered,
            gram,
            f: TrigInterpolant::new(&l.grid, f),
            radius,
        }
    }

    /// Map and Jacobian at `(theta, s)`.
    pub(crate) fn map(&self, theta: &[f64], s: &[f64]) -> (Vec<f64>, Mat) {
        let (n, d) = (self.n, self.d);
        let mut q = vec![0.0; d];
        let mut jac = Mat::zeros(d, d);
        let ph = self.f.phases(theta);
        for i in 0..d {
            let (v, g) = self.position[i].eval_phases(&ph);
            q[i] = v + (0..n).map(|a| self.winding[(i, a)] * theta[a]).sum::<f64>();
            for a in 0..n {
                jac[(i, a)] = g[a] + self.winding[(i, a)];
            }
        }
        for b in 0..n {
            for i in 0..d {
                let (v, g) = self.normals[i + d * b].eval_phases(&ph);
                q[i] += s[b] * v;
                jac[(i, n + b)] = v;
                for a in 0..n {
                    jac[(i, a)] += s[b] * g[a];
                }
            }
        }
        (q, jac)
    }

    pub(crate) fn locate(&self, q: &[f64], guess: &TubePoint) -> Option<TubePoint> {
        let n = self.n;
        let mut theta = guess.theta.clone();
        let mut s = guess.s.clone();
        let mut last = f64::INFINITY;
        for _ in 0..30 {
            let (x, jac) = self.map(&theta, &s);
            let r = DVector::from_iterator(self.d, x.iter().zip(q).map(|(a, b)| a - b));
            let step = jac.lu().solve(&r)?;
            for a in 0..n {
                theta[a] -= step[a];
                s[a] -= step[n + a];
            }
            let size = step.amax();
            // stop at roundoff: tiny step, or no further contraction
            if size < 1e-14 || (size < 1e-11 && size > 0.5 * last) {
                let (_, jac) = self.map(&theta, &s);
                return Some(TubePoint { theta, s, jac });
            }
            last = size;
        }
        let (_, jac) = self.map(&theta, &s);
        Some(TubePoint { theta, s, jac })
    }

    /// `|s|` measured by the ambient metric at the base point.
    pub(crate) fn normal_length(&self, tp: &TubePoint) -> f64 {
        let n = self.n;
        let mut q = 0.0;
        for b in 0..n {
            for a in 0..n {
                q += tp.s[a] * tp.s[b] * self.gram[a + n * b].eval(&tp.theta);
            }
        }
        q.max(0.0).sqrt()
    }

    /// Coordinate gradient of the extended potential at a located point.
    fn gradient(&self, tp: &TubePoint) -> Vec<f64> {
        let n = self.n;
        let ph = self.f.phases(&tp.theta);
        let (fv, fg) = self.f.eval_phases(&ph);
        let mut gmat = Mat::zeros(n, n);
        let mut dgmat = vec![Mat::zeros(n, n); n];
        for b in 0..n {
            for a in 0..n {
                let (v, g) = self.gram[a + n * b].eval_phases(&ph);
                gmat[(a, b)] = v;
                for c in 0..n {
                    dgmat[c][(a, b)] = g[c];
                }
            }
        }
        let s = DVector::from_column_slice(&tp.s);
        let norm = (s.transpose() * &gmat * &s)[0].max(0.0).sqrt();
        let t = norm / self.radius;
        let (chi, dchi) = cutoff(t);
        // derivative of F = f(theta) chi(t) in (theta, s)
        let mut dfs = vec![0.0; 2 * n];
        for a in 0..n {
            dfs[a] = fg[a] * chi;
        }
        if dchi != 0.0 && norm > 0.0 {
            let gs = &gmat * &s;
            for a in 0..n {
                let dt_dtheta = (s.transpose() * &dgmat[a] * &s)[0] / (2.0 * self.radius * norm);
                dfs[a] += fv * dchi * dt_dtheta;
                dfs[n + a] = fv * dchi * gs[a] / (self.radius * norm);
            }
        }
        // chain rule through the inverse of the tube map: dF/dq = dF/d(theta,s) * jac^{-1}
        let inv = tp.jac.clone().try_inverse().unwrap_or_else(|| Mat::zeros(2 * n, 2 * n));
        let row = DMatrix::from_row_slice(1, 2 * n, &dfs) * inv;
        row.iter().copied().collect()
    }
}

/// Largest principal curvature over the grid.
fn max_curvature(geom: &ImmersionGeometry) -> f64 {
    geom.nodes
        .iter()
        .map(|g| {
            let n = g.metric.nrows();
            let mut m = 0.0f64;
            for a in 0..n {
                for b in 0..n {
                    let v = &g.second_fundamental[a][b];
                    let norm = (v.transpose() * &g.ambient.metric * v)[0].max(0.0).sqrt();
                    m = m.max(norm / (g.metric[(a, a)] * g.metric[(b, b)]).sqrt());
                }
            }
            m
        })
        .fold(0.0, f64::max)
}

/// Half the focal-radius estimate, capped by the chart margin.
pub fn tube_radius(l: &TorusImmersion, geom: &ImmersionGeometry) -> f64 {
    let kappa = max_curvature(geom);
    let focal = if kappa > 1e-12 { 1.0 / kappa } else { f64::INFINITY };
    let margin = l.values.iter().map(|p| l.manifold.chart_margin(p)).fold(f64::INFINITY, f64::min);
    let metric_scale = geom
        .nodes
        .iter()
        .map(|g| g.ambient.metric.clone().symmetric_eigenvalues().max().sqrt())
        .fold(0.0, f64::max);
    (0.5 * focal).min(0.5 * margin / metric_scale.max(1e-300)).min(1.0)
}

/// Moves every node by the time-one flow of `X_{chi * f~}` where `f~` is `f`
/// extended constantly along the normal tube and `chi` a quintic cutoff.
pub fn deform(l: &TorusImmersion, d: &HamiltonianDeformation) -> Result<TorusImmersion> {
    let fmax = d.f.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let fmean = d.f.iter().sum::<f64>() / d.f.len() as f64;
    if d.f.iter().all(|v| (v - fmean).abs() <= 1e-15 * fmax.max(1.0)) {
        return Ok(l.clone());
    }
    let geom = immersion_geometry(l, false)?;
    let radius = d.radius.unwrap_or_else(|| tube_radius(l, &geom));
    let displacement = differential(&l.grid, &d.f)
        .iter()
        .zip(&geom.nodes)
        .map(|(df, g)| {
            let v = DVector::from_column_slice(df);
            (v.transpose() * &g.inverse * &v)[0].max(0.0).sqrt()
        })
        .fold(0.0, f64::max);
    if !(displacement < 0.25 * radius) {
        return Err(Error::TubeTooSmall { radius, displacement });
    }
    let tube = Tube::new(l, &geom, &d.f, radius);
    let n = l.n;
    let steps = d.flow_steps.max(1);
    let dt = 1.0 / steps as f64;
    let m = &l.manifold;
    let nodes = l.grid.nodes();
    let values: Result<Vec<Vec<f64>>> = (0..l.grid.len())
        .into_par_iter()
        .map(|k| {
            let mut x = l.values[k].clone();
            let mut guess = TubePoint { theta: nodes[k].clone(), s: vec![0.0; n], jac: Mat::zeros(0, 0) };
            let field = |q: &[f64], guess: &mut TubePoint, time: f64| -> Result<Vec<f64>> {
                if m.chart_margin(q) <= 0.0 {
                    return Err(Error::FlowLeftAtlas { time });
                }
                let tp = tube.locate(q, guess).ok_or(Error::TubeTooSmall { radius, displacement })?;
                let grad = DVector::from_vec(tube.gradient(&tp));
                *guess = TubePoint { theta: tp.theta.clone(), s: tp.s.clone(), jac: Mat::zeros(0, 0) };
                let om = m.omega(q)?;
                let inv = om.try_inverse().ok_or(Error::FlowLeftAtlas { time })?;
                Ok((-(inv * grad)).iter().copied().collect())
            };
            let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * y).collect() };
            for step in 0..steps {
                let time = step as f64 * dt;
                let k1 = field(&x, &mut guess, time)?;
                let k2 = field(&axpy(&x, 0.5 * dt, &k1), &mut guess, time)?;
                let k3 = field(&axpy(&x, 0.5 * dt, &k2), &mut guess, time)?;
                let k4 = field(&axpy(&x, dt, &k3), &mut guess, time)?;
                for i in 0..x.len() {
                    x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            Ok(x)
        })
        .collect();
    Ok(TorusImmersion { values: values?, ..l.clone() })
}

/// Convenience: deform by `f` with default extension.
pub fn deform_by(l: &TorusImmersion, f: &[f64]) -> Result<TorusImmersion> {
    deform(l, &HamiltonianDeformation::new(f.to_vec()))
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstVariationReport {
    pub finite_difference: f64,
    pub predicted: f64,
    pub absolute_error: f64,
    pub relative_error: f64,
}

/// Compares the central difference of `vol(deform(ell, t v|_L))` at `t = 0`
/// with `-int <d* alpha_H, v|_L>`.
pub fn variation_check_first(l: &TorusImmersion, v: &dyn ScalarField, h: f64) -> Result<FirstVariationReport> {
    let f = l.restrict(v);
    first_variation_of(l, &f, h)
}

pub fn first_variation_of(l: &TorusImmersion, f: &[f64], h: f64) -> Result<FirstVariationReport> {
    let geom = immersion_geometry(l, false)?;
    let sq = geom.sqrt_det();
    let prod: Vec<f64> = geom.maslov.residual.iter().zip(f).map(|(r, v)| r * v).collect();
    let predicted = -l.grid.integrate(&prod, &sq);
    let scaled = |s: f64| f.iter().map(|v| s * v).collect::<Vec<_>>();
    let plus = volume(&deform_by(l, &scaled(h))?)?;
    let minus = volume(&deform_by(l, &scaled(-h))?)?;
    let fd = (plus - minus) / (2.0 * h);
    let abs = (fd - predicted).abs();
    Ok(FirstVariationReport {
        finite_difference: fd,
        predicted,
        absolute_error: abs,
        relative_error: abs / fd.abs().max(predicted.abs()).max(f64::MIN_POSITIVE),
    })
}

/// Second derivative of `vol(deform(ell, t u))` at `t = 0` by central differences.
pub fn second_variation_fd(l: &TorusImmersion, u: &[f64], h: f64) -> Result<f64> {
    let v0 = volume(l)?;
    let scaled = |s: f64| u.iter().map(|v| s * v).collect::<Vec<_>>();
    let plus = volume(&deform_by(l, &scaled(h))?)?;
    let minus = volume(&deform_by(l, &scaled(-h))?)?;
    Ok((plus - 2.0 * v0 + minus) / (h * h))
}

/// Harmonic representatives `d theta_i + d phi_i` of the standard generators.
#[derive(Debug, Clone, Serialize)]
pub struct HarmonicForms {
    /// `forms[i][node]` has `n` components in the `d theta` frame.
    pub forms: Vec<Vec<Vec<f64>>>,
    pub potentials: Vec<Vec<f64>>,
    /// Minimum pointwise `g_L`-norm of each form.
    pub min_norms: Vec<f64>,
    pub nonvanishing: bool,
    pub residual: f64,
}

/// Solves `d*(d theta_i + d phi_i) = 0` by Galerkin projection on the
/// truncated Fourier basis.
pub fn harmonic_one_forms(l: &TorusImmersion) -> Result<HarmonicForms> {
    let ig = induced_geometry(l)?;
    let n = l.n;
    let grid = &l.grid;
    if n == 1 {
        return Ok(harmonic_on_circle(grid, &ig));
    }
    let m = grid.size / 2 - 1;
    let basis = FourierBasis::new(n, m);
    let phi = basis.on_grid(grid);
    let b = basis.len();
    let dphi: Vec<Vec<Vec<f64>>> = (1..b).map(|j| {
        let col: Vec<f64> = phi.column(j).iter().copied().collect();
        (0..n).map(|a| grid.derivative(&col, a)).collect()
    }).collect();
    let inv: Vec<Mat> = ig.metric.iter().map(|g| g.clone().try_inverse().unwrap()).collect();
    let w = grid.weight();
    let flux = |k: usize, x: &dyn Fn(usize) -> f64, y: &dyn Fn(usize) -> f64| -> f64 {
        let mut s = 0.0;
        for a in 0..n {
            for c in 0..n {
                s += inv[k][(a, c)] * x(a) * y(c);
            }
        }
        s * ig.sqrt_det[k]
    };
    let nb = b - 1;
    let mut stiff = Mat::zeros(nb, nb);
    for i in 0..nb {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..grid.len() {
                s += flux(k, &|a| dphi[i][a][k], &|c| dphi[j][c][k]);
            }
            stiff[(i, j)] = s * w;
            stiff[(j, i)] = s * w;
        }
    }
    let chol = stiff.clone().cholesky().ok_or_else(|| Error::SolverDiverged("stiffness matrix not positive".into()))?;
    let mut forms = Vec::new();
    let mut potentials = Vec::new();
    let mut min_norms = Vec::new();
    let mut worst = 0.0f64;
    for gen in 0..n {
        let rhs = DVector::from_fn(nb, |i, _| {
            -(0..grid.len()).map(|k| flux(k, &|a| if a == gen { 1.0 } else { 0.0 }, &|c| dphi[i][c][k])).sum::<f64>() * w
        });
        let coef = chol.solve(&rhs);
        let pot: Vec<f64> = (0..grid.len()).map(|k| (0..nb).map(|i| coef[i] * phi[(k, i + 1)]).sum()).collect();
        let dp = differential(grid, &pot);
        let form: Vec<Vec<f64>> =
            dp.iter().map(|v| (0..n).map(|a| v[a] + if a == gen { 1.0 } else { 0.0 }).collect()).collect();
        // strong residual of d* on the grid
        let mut acc = vec![0.0; grid.len()];
        for a in 0..n {
            let fl: Vec<f64> =
                (0..grid.len()).map(|k| ig.sqrt_det[k] * (0..n).map(|c| inv[k][(a, c)] * form[k][c]).sum::<f64>()).collect();
            for (s, v) in acc.iter_mut().zip(grid.derivative(&fl, a)) {
                *s += v;
            }
        }
        let res = acc.iter().zip(&ig.sqrt_det).map(|(s, q)| (s / q).abs()).fold(0.0, f64::max);
        worst = worst.max(res);
        let norms: Vec<f64> = form
            .iter()
            .zip(&inv)
            .map(|(v, gi)| {
                let v = DVector::from_column_slice(v);
                (v.transpose() * gi * &v)[0].max(0.0).sqrt()
            })
            .collect();
        min_norms.push(norms.iter().copied().fold(f64::INFINITY, f64::min));
        forms.push(form);
        potentials.push(pot);
    }
    let scale = ig.metric.iter().map(|g| g.amax()).fold(0.0, f64::max).max(1.0);
    if !(worst < 1e-6 * scale) {
        return Err(Error::SolverDiverged(format!("harmonic residual {worst:e}")));
    }
    let nonvanishing = min_norms.iter().all(|&v| v > 1e-8);
    Ok(HarmonicForms { forms, potentials, min_norms, nonvanishing, residual: worst })
}

/// On a circle the harmonic form is `c sqrt(g) d theta`, normalized to unit period.
fn harmonic_on_circle(grid: &Grid, ig: &InducedGeometry) -> HarmonicForms {
    let size = grid.len();
    let mean = ig.sqrt_det.iter().sum::<f64>() / size as f64;
    let form: Vec<f64> = ig.sqrt_det.iter().map(|q| q / mean).collect();
    // band-limited antiderivative of form - 1
    let mut pot = vec![0.0; size];
    let h = grid.spacing();
    for k in 1..size.div_ceil(2) {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, a) in form.iter().enumerate() {
            let (s, c) = (k as f64 * j as f64 * h).sin_cos();
            re += (a - 1.0) * c;
            im -= (a - 1.0) * s;
        }
        let (re, im) = (2.0 * re / size as f64, 2.0 * im / size as f64);
        for (j, p) in pot.iter_mut().enumerate() {
            let (s, c) = (k as f64 * j as f64 * h).sin_cos();
            *p += (re * s + im * c) / k as f64;
        }
    }
    let norms: Vec<f64> = form.iter().zip(&ig.metric).map(|(a, g)| a.abs() / g[(0, 0)].sqrt()).collect();
    let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
    HarmonicForms {
        forms: vec![form.iter().map(|a| vec![*a]).collect()],
        potentials: vec![pot],
        min_norms: vec![min],
        nonvanishing: min > 1e-8,
        residual: 0.0,
    }
}

/// Split of chart coordinates into an angle block (carrying the winding) and a
/// momentum block (constant along `ell`) for graph constructions.
fn graph_blocks(l: &TorusImmersion) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = l.n;
    let parts = l.periodic_parts();
    let constant = |i: usize| {
        let m = parts[i].iter().sum::<f64>() / parts[i].len() as f64;
        parts[i].iter().all(|v| (v - m).abs() < 1e-12) && (0..n).all(|a| l.winding[(i, a)] == 0.0)
    };
    let first: Vec<usize> = (0..n).collect();
    let second: Vec<usize> = (n..2 * n).collect();
    let pure_angle = |block: &[usize]| block.iter().all(|&i| {
        let m = parts[i].iter().sum::<f64>() / parts[i].len() as f64;
        parts[i].iter().all(|v| (v - m).abs() < 1e-12)
    });
    if first.iter().all(|&i| constant(i)) && pure_angle(&second) {
        Ok((second, first))
    } else if second.iter().all(|&i| constant(i)) && pure_angle(&first) {
        Ok((first, second))
    } else {
        Err(Error::UnsupportedBackend { backend: "immersion is not a graph over an angle block".into() })
    }
}

/// Family member with its parameter.
#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub t: Vec<f64>,
    pub immersion: TorusImmersion,
}

/// Lagrangian graphs of the harmonic forms `sum_i t_i h_i` over `ell`, for `t`
/// on the given sample set (each of norm at most `radius`).
pub fn fibration_seed(l: &TorusImmersion, params: &[Vec<f64>], radius: f64) -> Result<Vec<FamilyMember>> {
    let hf = harmonic_one_forms(l)?;
    if !hf.nonvanishing {
        return Err(Error::SolverDiverged("harmonic form vanishes somewhere".into()));
    }
    let (angle, momentum) = graph_blocks(l)?;
    let n = l.n;
    // angle coordinates are q = W theta + const; forms in dq are W^{-T} alpha
    let w = Mat::from_fn(n, n, |i, a| l.winding[(angle[i], a)]);
    let winv_t = w.clone().try_inverse().ok_or(Error::DegenerateInducedMetric { node: 0 })?.transpose();
    let mut out = Vec::new();
    for t in params {
        if t.iter().map(|v| v * v).sum::<f64>().sqrt() > radius + 1e-15 {
            continue;
        }
        let mut values = l.values.clone();
        for (k, v) in values.iter_mut().enumerate() {
            let alpha = DVector::from_fn(n, |a, _| (0..n).map(|i| t[i] * hf.forms[i][k][a]).sum());
            let dq = &winv_t * alpha;
            for (j, &mi) in momentum.iter().enumerate() {
                v[mi] += dq[j];
            }
            if l.manifold.chart_margin(v) <= 0.0 {
                return Err(Error::BoundaryPoint { point: v.clone() });
            }
        }
        out.push(FamilyMember { t: t.clone(), immersion: TorusImmersion { values, ..l.clone() } });
    }
    // disjointness of members with distinct parameters
    let mut sep = f64::INFINITY;
    for i in 0..out.len() {
        for j in 0..i {
            let dt = out[i].t.iter().zip(&out[j].t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if dt == 0.0 {
                continue;
            }
            let min_gap = out[i]
                .immersion
                .values
                .iter()
                .zip(&out[j].immersion.values)
                .map(|(a, b)| momentum.iter().map(|&m| (a[m] - b[m]).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            sep = sep.min(min_gap / dt);
        }
    }
    let floor = hf.min_norms.iter().copied().fold(f64::INFINITY, f64::min) * 1e-3;
    if sep < floor {
        return Err(Error::FamilyOverlap { separation: sep });
    }
    Ok(out)
}

/// JSON snapshot: backend, grid, winding and Fourier coefficients of the
/// periodic part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImmersionSnapshot {
    pub backend: Backend,
    pub n: usize,
    pub grid: usize,
    pub winding: Vec<Vec<f64>>,
    /// `coefficients[i]` holds `(re, im)` pairs for chart coordinate `i`.
    pub coefficients: Vec<Vec<(f64, f64)>>,
}

impl TorusImmersion {
    pub fn to_snapshot(&self) -> ImmersionSnapshot {
        ImmersionSnapshot {
            backend: self.manifold.backend.clone(),
            n: self.n,
            grid: self.grid.size,
            winding: (0..self.dim()).map(|i| (0..self.n).map(|a| self.winding[(i, a)]).collect()).collect(),
            coefficients: self
                .interpolants()
                .iter()
                .map(|it| it.coefficients().iter().map(|c| (c.re, c.im)).collect())
                .collect(),
        }
    }

    pub fn from_snapshot(s: &ImmersionSnapshot) -> Result<Self> {
        let d = 2 * s.n;
        if s.winding.len() != d || s.coefficients.len() != d {
            return Err(Error::Snapshot("dimension mismatch".into()));
        }
        let grid = Grid::new(s.n, s.grid);
        let winding = DMatrix::from_fn(d, s.n, |i, a| s.winding[i][a]);
        let manifold = ChartedManifold::new(s.backend.clone());
        let nodes = grid.nodes();
        let size = s.grid;
        let mut values = vec![vec![0.0; d]; grid.len()];
        for i in 0..d {
            let c = &s.coefficients[i];
            if c.len() != grid.len() {
                return Err(Error::Snapshot("coefficient count mismatch".into()));
            }
            let vals = inverse_dft(&grid, c);
            for k in 0..grid.len() {
                values[k][i] = vals[k] + (0..s.n).map(|a| winding[(i, a)] * nodes[k][a]).sum::<f64>();
            }
        }
        let _ = size;
        Ok(TorusImmersion { manifold, n: s.n, grid, values, winding })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_snapshot()).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: ImmersionSnapshot = serde_json::from_str(text).map_err(|e| Error::Snapshot(e.to_string()))?;
        Self::from_snapshot(&s)
    }

    /// CSV with columns `node, i_1..i_n, c_1..c_2n`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["node".to_string()];
        header.extend((1..=self.n).map(|a| format!("i{a}")));
        header.extend((1..=self.dim()).map(|i| format!("c{i}")));
        w.write_record(&header).map_err(|e| Error::Snapshot(e.to_string()))?;
        for (k, v) in self.values.iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(self.grid.multi_index(k).iter().map(|i| i.to_string()));
            rec.extend(v.iter().map(|x| format!("{x:?}")));
            w.write_record(&rec).map_err(|e| Error::Snapshot(e.to_string()))?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Snapshot(e.to_string()))?).map_err(|e| Error::Snapshot(e.to_string()))
    }

    /// Reads node values written by [`TorusImmersion::to_csv`] into an immersion
    /// with the given manifold and winding.
    pub fn from_csv(text: &str, manifold: ChartedManifold, n: usize, winding: DMatrix<f64>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Snapshot(e.to_string()))?;
            let k: usize = rec[0].parse().map_err(|_| Error::Snapshot("bad node index".into()))?;
            let v: std::result::Result<Vec<f64>, _> = rec.iter().skip(1 + n).map(|s| s.parse::<f64>()).collect();
            rows.push((k, v.map_err(|e| Error::Snapshot(e.to_string()))?));
        }
        let total = rows.len();
        let size = (total as f64).powf(1.0 / n as f64).round() as usize;
        let grid = Grid::new(n, size);
        if grid.len() != total {
            return Err(Error::Snapshot("row count is not a full grid".into()));
        }
        let mut values = vec![Vec::new(); total];
        for (k, v) in rows {
            if k >= total || v.len() != 2 * n {
                return Err(Error::Snapshot("bad row".into()));
            }
            values[k] = v;
        }
        Ok(TorusImmersion { manifold, n, grid, values, winding })
    }
}

fn inverse_dft(grid: &Grid, coeffs: &[(f64, f64)]) -> Vec<f64> {
    use std::f64::consts::PI;
    let size = grid.size;
    let mut data: Vec<(f64, f64)> = coeffs.to_vec();
    let mut line = vec![(0.0, 0.0); size];
    for axis in 0..grid.n {
        let stride = size.pow(axis as u32);
        for base in 0..data.len() {
            if !(base / stride).is_multiple_of(size) {
                continue;
            }
            for j in 0..size {
                let mut s = (0.0, 0.0);
                for k in 0..size {
                    let ang = 2.0 * PI * (k * j) as f64 / size as f64;
                    let (c, sn) = (ang.cos(), ang.sin());
                    let (re, im) = data[base + k * stride];
                    s.0 += re * c - im * sn;
                    s.1 += re * sn + im * c;
                }
                line[j] = s;
            }
            for j in 0..size {
                data[base + j * stride] = line[j];
            }
        }
    }
    data.into_iter().map(|c| c.0).collect()
}
