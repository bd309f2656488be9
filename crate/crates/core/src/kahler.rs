//! Model almost-Kähler manifolds evaluated in charts: symplectic form,
//! compatible complex structure, metric, Christoffel symbols, Ricci tensor,
//! Hamiltonian flows and Killing potentials.
//!
//! All charts except the affine chart of projective space are Darboux charts
//! with coordinates ordered `(q_1..q_n, p_1..p_n)` and `omega = sum dq_i ^ dp_i`.
//! The metric is `g(v, w) = omega(v, J w)`, so as matrices `g = Omega J`.
//! Hamiltonian vector fields follow `dv = omega(X_v, .)`.

use crate::error::{Error, Result};
use crate::fields::{Affine, Constant, Field, FnField, ScalarField};
use crate::quadrature::gauss_legendre;
use crate::toric::{guillemin_jet, vertices, LabelledPolytope};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub type Mat = DMatrix<f64>;

/// Chart used for complex projective space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CpChart {
    /// `z in C^n`, coordinates `(Re z, Im z)`, Kähler potential `log(1 + |z|^2)`.
    Affine,
    /// Moment coordinates on the open simplex and angles, Guillemin metric.
    ActionAngle,
}

/// A sphere-like surface: the image of the unit sphere under the linear map
/// `R diag(axes) R^T`, carrying the round area form and the structure whose
/// metric is the induced ellipsoid metric rescaled to that area form.
/// Chart coordinates are `(z, phi)` on the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub axes: [f64; 3],
    pub rotation: [[f64; 3]; 3],
}

impl Surface {
    pub fn round() -> Self {
        Surface::ellipsoid([1.0, 1.0, 1.0])
    }

    pub fn ellipsoid(axes: [f64; 3]) -> Self {
        Surface { axes, rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    /// Ellipsoid with its principal frame rotated by `angle` about `axis`.
    pub fn tilted(axes: [f64; 3], axis: [f64; 3], angle: f64) -> Self {
        Surface { axes, rotation: rotation_matrix(axis, angle) }
    }

    pub fn is_round(&self) -> bool {
        self.axes.iter().all(|&a| (a - 1.0).abs() < 1e-15)
    }

    /// Symmetry axis when two semi-axes agree.
    pub fn revolution_axis(&self) -> Option<[f64; 3]> {
        let [a, b, c] = self.axes;
        let col = |k: usize| [self.rotation[0][k], self.rotation[1][k], self.rotation[2][k]];
        if (a - b).abs() < 1e-15 {
            Some(col(2))
        } else if (b - c).abs() < 1e-15 {
            Some(col(0))
        } else if (a - c).abs() < 1e-15 {
            Some(col(1))
        } else {
            None
        }
    }

    fn linear_map(&self) -> [[f64; 3]; 3] {
        let r = &self.rotation;
        let mut e = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                e[i][j] = (0..3).map(|k| r[i][k] * self.axes[k] * r[j][k]).sum();
            }
        }
        e
    }
}

pub fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

/// Point of the unit sphere with chart coordinates `(z, phi)`.
pub fn sphere_point(p: &[f64]) -> [f64; 3] {
    let s = (1.0 - p[0] * p[0]).max(0.0).sqrt();
    [s * p[1].cos(), s * p[1].sin(), p[0]]
}

/// Chart coordinates `(z, phi)` of a unit vector, `phi` chosen nearest `phi_ref`.
pub fn sphere_chart(u: [f64; 3], phi_ref: f64) -> [f64; 2] {
    let phi = u[1].atan2(u[0]);
    let k = ((phi_ref - phi) / (2.0 * PI)).round();
    [u[2], phi + 2.0 * PI * k]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Backend {
    /// `R^{2n}` modulo the rectangular lattice with the given periods
    /// (one per coordinate `x_1..x_n, y_1..y_n`), flat metric.
    FlatTorus { periods: Vec<f64> },
    ProjectiveSpace { n: usize, chart: CpChart },
    SurfaceOfRevolution(Surface),
    /// Guillemin metric of a Delzant polytope in action-angle coordinates.
    Toric(LabelledPolytope),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    FlatTorus,
    ProjectiveSpace,
    SurfaceOfRevolution,
    Toric,
}

/// Sign and normalization conventions shared by every computation.
#[derive(Debug, Clone, Serialize)]
pub struct MetricConvention {
    /// `Delta = d* d`, nonnegative on functions.
    pub laplacian: &'static str,
    /// `H` is the trace of the second fundamental form, so the first variation of
    /// volume along a normal field `V` is `-int <H, V>`.
    pub mean_curvature: &'static str,
    pub distance: &'static str,
    pub hamiltonian: &'static str,
}

pub const CONVENTION: MetricConvention = MetricConvention {
    laplacian: "Delta = d*d (nonnegative)",
    mean_curvature: "delta vol = -int <H, V>",
    distance: "unit-speed geodesics of g",
    hamiltonian: "dv = omega(X_v, .)",
};

/// Domain box of a chart. Periodic coordinates have `period = Some(..)`.
#[derive(Debug, Clone, Serialize)]
pub struct ChartDescriptor {
    pub name: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub period: Vec<Option<f64>>,
    pub transition: String,
}

/// A compatible structure replacing the reference one. Returns the metric
/// `g' = Omega J'` at `p`; it must be symmetric positive definite and satisfy
/// `(g' Omega^{-1})^2 = -1`.
pub trait StructureField: Send + Sync {
    fn metric(&self, p: &[f64], reference: &Mat, omega: &Mat) -> Mat;
    fn describe(&self) -> String {
        "structure field".into()
    }
}

#[derive(Clone)]
pub struct ChartedManifold {
    pub backend: Backend,
    pub perturbation: Option<Arc<dyn StructureField>>,
    pub fd_step: f64,
}

impl fmt::Debug for ChartedManifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChartedManifold")
            .field("backend", &self.backend)
            .field("perturbation", &self.perturbation.as_ref().map(|p| p.describe()))
            .field("fd_step", &self.fd_step)
            .finish()
    }
}

/// Metric with first and (optionally) second coordinate derivatives.
/// `dg[k]` is `d g / d p_k`, `ddg[k][l]` is `d^2 g / d p_k d p_l`.
#[derive(Debug, Clone)]
pub struct MetricJet {
    pub g: Mat,
    pub dg: Vec<Mat>,
    pub ddg: Option<Vec<Vec<Mat>>>,
}

#[derive(Debug, Clone)]
pub struct TensorEval {
    pub point: Vec<f64>,
    pub omega: Mat,
    pub acs: Mat,
    pub metric: Mat,
    /// `christoffel[k][(i, j)] = Gamma^k_ij`.
    pub christoffel: Vec<Mat>,
    pub ricci: Mat,
}

impl ChartedManifold {
    pub fn new(backend: Backend) -> Self {
        ChartedManifold { backend, perturbation: None, fd_step: 1e-4 }
    }

    pub fn flat(n: usize) -> Self {
        Self::new(Backend::FlatTorus { periods: vec![2.0 * PI; 2 * n] })
    }

    pub fn projective(n: usize, chart: CpChart) -> Self {
        Self::new(Backend::ProjectiveSpace { n, chart })
    }

    pub fn sphere() -> Self {
        Self::new(Backend::SurfaceOfRevolution(Surface::round()))
    }

    pub fn with_perturbation(mut self, field: Arc<dyn StructureField>) -> Self {
        self.perturbation = Some(field);
        self
    }

    /// The same manifold with the reference structure.
    pub fn reference(&self) -> Self {
        ChartedManifold { backend: self.backend.clone(), perturbation: None, fd_step: self.fd_step }
    }

    pub fn n(&self) -> usize {
        match &self.backend {
            Backend::FlatTorus { periods } => periods.len() / 2,
            Backend::ProjectiveSpace { n, .. } => *n,
            Backend::SurfaceOfRevolution(_) => 1,
            Backend::Toric(p) => p.dim,
        }
    }

    pub fn real_dimension(&self) -> usize {
        2 * self.n()
    }

    pub fn backend_kind(&self) -> BackendKind {
        match self.backend {
            Backend::FlatTorus { .. } => BackendKind::FlatTorus,
            Backend::ProjectiveSpace { .. } => BackendKind::ProjectiveSpace,
            Backend::SurfaceOfRevolution(_) => BackendKind::SurfaceOfRevolution,
            Backend::Toric(_) => BackendKind::Toric,
        }
    }

    pub fn convention(&self) -> &'static MetricConvention {
        &CONVENTION
    }

    /// Integrable when there is no perturbation or the real dimension is two.
    pub fn is_integrable(&self) -> bool {
        self.perturbation.is_none() || self.real_dimension() == 2
    }

    pub fn periods(&self) -> Vec<Option<f64>> {
        let n = self.n();
        match &self.backend {
            Backend::FlatTorus { periods } => periods.iter().map(|&p| Some(p)).collect(),
            Backend::ProjectiveSpace { chart: CpChart::Affine, .. } => vec![None; 2 * n],
            _ => (0..2 * n).map(|i| if i < n { None } else { Some(2.0 * PI) }).collect(),
        }
    }

    pub fn chart_atlas(&self) -> Vec<ChartDescriptor> {
        let n = self.n();
        let period = self.periods();
        let (name, lower, upper, transition) = match &self.backend {
            Backend::FlatTorus { periods } => {
                ("universal cover".to_string(), vec![f64::NEG_INFINITY; 2 * n], vec![f64::INFINITY; 2 * n], format!("translation by periods {periods:?}"))
            }
            Backend::ProjectiveSpace { chart: CpChart::Affine, .. } => (
                "affine Z_0 != 0".into(),
                vec![f64::NEG_INFINITY; 2 * n],
                vec![f64::INFINITY; 2 * n],
                "z_i = Z_i / Z_0".into(),
            ),
            Backend::SurfaceOfRevolution(_) => {
                ("height-angle".into(), vec![-1.0, f64::NEG_INFINITY], vec![1.0, f64::INFINITY], "phi mod 2 pi".into())
            }
            Backend::ProjectiveSpace { chart: CpChart::ActionAngle, .. } | Backend::Toric(_) => {
                let poly = self.polytope().expect("toric chart");
                let verts = vertices(&poly).unwrap_or_default();
                let mut lo = vec![f64::NEG_INFINITY; 2 * n];
                let mut hi = vec![f64::INFINITY; 2 * n];
                for i in 0..n {
                    lo[i] = verts.iter().map(|v| v.point[i]).fold(f64::INFINITY, f64::min);
                    hi[i] = verts.iter().map(|v| v.point[i]).fold(f64::NEG_INFINITY, f64::max);
                }
                ("action-angle over the open polytope".into(), lo, hi, "theta mod 2 pi".into())
            }
        };
        vec![ChartDescriptor { name, lower, upper, period, transition }]
    }

    /// Polytope behind an action-angle chart.
    pub fn polytope(&self) -> Option<LabelledPolytope> {
        match &self.backend {
            Backend::Toric(p) => Some(p.clone()),
            Backend::ProjectiveSpace { n, chart: CpChart::ActionAngle } => Some(LabelledPolytope::simplex(*n)),
            Backend::SurfaceOfRevolution(s) if s.is_round() => Some(LabelledPolytope::new(vec![vec![1], vec![-1]], vec![1.0, 1.0])),
            _ => None,
        }
    }

    /// Coordinate distance from `p` to the chart boundary (infinite for unbounded charts).
    pub fn chart_margin(&self, p: &[f64]) -> f64 {
        if p.len() != self.real_dimension() || p.iter().any(|x| !x.is_finite()) {
            return f64::NEG_INFINITY;
        }
        match &self.backend {
            Backend::FlatTorus { .. } | Backend::ProjectiveSpace { chart: CpChart::Affine, .. } => f64::INFINITY,
            Backend::SurfaceOfRevolution(_) => 1.0 - p[0].abs(),
            Backend::ProjectiveSpace { chart: CpChart::ActionAngle, .. } | Backend::Toric(_) => {
                let poly = self.polytope().unwrap();
                let n = poly.dim;
                poly.normals
                    .iter()
                    .zip(poly.facet_values(&p[..n]))
                    .map(|(nu, l)| l / nu.iter().map(|&a| (a * a) as f64).sum::<f64>().sqrt())
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn omega(&self, p: &[f64]) -> Result<Mat> {
        match &self.backend {
            Backend::ProjectiveSpace { chart: CpChart::Affine, n } => {
                let g = fs_affine_metric(*n, p);
                Ok(-(&g * standard_j(*n)))
            }
            _ => Ok(standard_omega(self.n())),
        }
    }

    pub fn reference_metric(&self, p: &[f64]) -> Result<Mat> {
        if self.chart_margin(p) <= 0.0 {
            return Err(Error::PointOutsideChart { point: p.to_vec() });
        }
        let n = self.n();
        Ok(match &self.backend {
            Backend::FlatTorus { .. } => Mat::identity(2 * n, 2 * n),
            Backend::ProjectiveSpace { chart: CpChart::Affine, .. } => fs_affine_metric(n, p),
            Backend::SurfaceOfRevolution(s) => surface_metric(s, p),
            Backend::ProjectiveSpace { .. } | Backend::Toric(_) => {
                let poly = self.polytope().unwrap();
                let (g, _, _) = guillemin_jet(&poly, &p[..n])?;
                toric_block(&g)?
            }
        })
    }

    pub fn metric(&self, p: &[f64]) -> Result<Mat> {
        let g0 = self.reference_metric(p)?;
        match &self.perturbation {
            None => Ok(g0),
            Some(f) => Ok(f.metric(p, &g0, &self.omega(p)?)),
        }
    }

    /// `J = Omega^{-1} g`.
    pub fn acs(&self, p: &[f64]) -> Result<Mat> {
        let om = self.omega(p)?;
        let g = self.metric(p)?;
        Ok(om.try_inverse().ok_or(Error::PointOutsideChart { point: p.to_vec() })? * g)
    }

    pub fn metric_jet(&self, p: &[f64], second: bool) -> Result<MetricJet> {
        if self.perturbation.is_none() {
            if let Some(j) = self.analytic_jet(p, second)? {
                return Ok(j);
            }
        }
        self.fd_jet(p, second)
    }

    fn analytic_jet(&self, p: &[f64], second: bool) -> Result<Option<MetricJet>> {
        let d = self.real_dimension();
        let n = self.n();
        match &self.backend {
            Backend::FlatTorus { .. } => Ok(Some(MetricJet {
                g: Mat::identity(d, d),
                dg: vec![Mat::zeros(d, d); d],
                ddg: second.then(|| vec![vec![Mat::zeros(d, d); d]; d]),
            })),
            Backend::ProjectiveSpace { chart: CpChart::Affine, .. } => Ok(None),
            Backend::SurfaceOfRevolution(s) if !s.is_round() => Ok(None),
            _ => {
                let poly = self.polytope().unwrap();
                if self.chart_margin(p) <= 0.0 {
                    return Err(Error::PointOutsideChart { point: p.to_vec() });
                }
                let (g, dg, ddg) = guillemin_jet(&poly, &p[..n])?;
                let ginv = g.clone().try_inverse().ok_or(Error::DegenerateMetric { point: p.to_vec(), min_eig: 0.0 })?;
                let dinv: Vec<Mat> = dg.iter().map(|a| -(&ginv * a * &ginv)).collect();
                let mut jet_dg = vec![Mat::zeros(d, d); d];
                for k in 0..n {
                    jet_dg[k] = block(&dg[k], &dinv[k]);
                }
                let jet_ddg = second.then(|| {
                    let mut out = vec![vec![Mat::zeros(d, d); d]; d];
                    for k in 0..n {
                        for l in 0..n {
                            let ddinv = &ginv * &dg[l] * &ginv * &dg[k] * &ginv + &ginv * &dg[k] * &ginv * &dg[l] * &ginv
                                - &ginv * &ddg[k][l] * &ginv;
                            out[k][l] = block(&ddg[k][l], &ddinv);
                        }
                    }
                    out
                });
                Ok(Some(MetricJet { g: block(&g, &ginv), dg: jet_dg, ddg: jet_ddg }))
            }
        }
    }

    fn fd_jet(&self, p: &[f64], second: bool) -> Result<MetricJet> {
        let d = self.real_dimension();
        let margin = self.chart_margin(p);
        let h1 = self.fd_step.min(margin / 3.0);
        let h2 = (self.fd_step.sqrt() * 0.1).min(margin / 3.0);
        let g = self.metric(p)?;
        let mut q = p.to_vec();
        let eval = |q: &mut Vec<f64>, i: usize, s: f64| -> Result<Mat> {
            let x = q[i];
            q[i] = x + s;
            let m = self.metric(q);
            q[i] = x;
            m
        };
        let mut dg = Vec::with_capacity(d);
        for i in 0..d {
            let a = eval(&mut q, i, 2.0 * h1)?;
            let b = eval(&mut q, i, h1)?;
            let c = eval(&mut q, i, -h1)?;
            let e = eval(&mut q, i, -2.0 * h1)?;
            dg.push((-a + b * 8.0 - c * 8.0 + e) / (12.0 * h1));
        }
        let ddg = if second {
            let mut out = vec![vec![Mat::zeros(d, d); d]; d];
            let st = [-2.0, -1.0, 1.0, 2.0];
            let w = [1.0, -8.0, 8.0, -1.0];
            for i in 0..d {
                let a = eval(&mut q, i, 2.0 * h2)?;
                let b = eval(&mut q, i, h2)?;
                let c = eval(&mut q, i, -h2)?;
                let e = eval(&mut q, i, -2.0 * h2)?;
                out[i][i] = (-a + b * 16.0 - &g * 30.0 + c * 16.0 - e) / (12.0 * h2 * h2);
                for j in 0..i {
                    let mut acc = Mat::zeros(d, d);
                    for (si, wi) in st.iter().zip(&w) {
                        for (sj, wj) in st.iter().zip(&w) {
                            let (xi, xj) = (q[i], q[j]);
                            q[i] = xi + si * h2;
                            q[j] = xj + sj * h2;
                            let m = self.metric(&q);
                            q[i] = xi;
                            q[j] = xj;
                            acc += m? * (wi * wj);
                        }
                    }
                    let v = acc / (144.0 * h2 * h2);
                    out[j][i] = v.clone();
                    out[i][j] = v;
                }
            }
            Some(out)
        } else {
            None
        };
        Ok(MetricJet { g, dg, ddg })
    }

    /// Coordinate gradient of `v` mapped to the Hamiltonian vector field,
    /// `X = -Omega^{-1} grad v`.
    pub fn hamiltonian_vector(&self, v: &dyn ScalarField, p: &[f64]) -> Result<Vec<f64>> {
        let om = self.omega(p)?;
        let inv = om.try_inverse().ok_or(Error::PointOutsideChart { point: p.to_vec() })?;
        let grad = nalgebra::DVector::from_vec(v.gradient(p));
        Ok((-(inv * grad)).iter().copied().collect())
    }
}

fn block(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows();
    let mut m = Mat::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(a);
    m.view_mut((n, n), (n, n)).copy_from(b);
    m
}

fn toric_block(g: &Mat) -> Result<Mat> {
    let inv = g.clone().try_inverse().ok_or(Error::DegenerateMetric { point: vec![], min_eig: 0.0 })?;
    Ok(block(g, &inv))
}

/// `[[0, I], [-I, 0]]`.
pub fn standard_omega(n: usize) -> Mat {
    let mut m = Mat::zeros(2 * n, 2 * n);
    for i in 0..n {
        m[(i, n + i)] = 1.0;
        m[(n + i, i)] = -1.0;
    }
    m
}

/// Standard complex structure `J e_x = e_y` in `(x, y)` ordering.
pub fn standard_j(n: usize) -> Mat {
    -standard_omega(n)
}

/// Real form `2 [[A, B], [-B, A]]` of the Hermitian matrix
/// `h = delta / s - conj(z_j) z_k / s^2`, `s = 1 + |z|^2`.
fn fs_affine_metric(n: usize, p: &[f64]) -> Mat {
    let (x, y) = p.split_at(n);
    let s = 1.0 + x.iter().chain(y).map(|a| a * a).sum::<f64>();
    let mut g = Mat::zeros(2 * n, 2 * n);
    for j in 0..n {
        for k in 0..n {
            // conj(z_j) z_k = (x_j - i y_j)(x_k + i y_k)
            let re = x[j] * x[k] + y[j] * y[k];
            let im = x[j] * y[k] - y[j] * x[k];
            let a = if j == k { 1.0 / s } else { 0.0 } - re / (s * s);
            let b = -im / (s * s);
            g[(j, k)] = 2.0 * a;
            g[(n + j, n + k)] = 2.0 * a;
            g[(j, n + k)] = 2.0 * b;
            g[(n + j, k)] = -2.0 * b;
        }
    }
    g
}

pub(crate) fn surface_metric(s: &Surface, p: &[f64]) -> Mat {
    let z = p[0];
    let (sp, cp) = p[1].sin_cos();
    let r = (1.0 - z * z).sqrt();
    if s.is_round() {
        return Mat::from_row_slice(2, 2, &[1.0 / (r * r), 0.0, 0.0, r * r]);
    }
    let du = [[-z / r * cp, -z / r * sp, 1.0], [-r * sp, r * cp, 0.0]];
    let e = s.linear_map();
    let img: Vec<[f64; 3]> =
        du.iter().map(|v| [0, 1, 2].map(|i| (0..3).map(|j| e[i][j] * v[j]).sum::<f64>())).collect();
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let g = Mat::from_row_slice(2, 2, &[dot(&img[0], &img[0]), dot(&img[0], &img[1]), dot(&img[1], &img[0]), dot(&img[1], &img[1])]);
    let det = g.determinant();
    g / det.sqrt()
}

/// `Gamma^k_ij` from a metric jet.
pub fn christoffel(jet: &MetricJet) -> Result<(Mat, Vec<Mat>)> {
    let d = jet.g.nrows();
    let ginv = jet.g.clone().try_inverse().ok_or(Error::DegenerateMetric { point: vec![], min_eig: 0.0 })?;
    let mut lower = vec![Mat::zeros(d, d); d]; // lower[l][(i,j)] = Gamma_{l,ij}
    for l in 0..d {
        for i in 0..d {
            for j in 0..d {
                lower[l][(i, j)] = 0.5 * (jet.dg[i][(j, l)] + jet.dg[j][(i, l)] - jet.dg[l][(i, j)]);
            }
        }
    }
    let mut gamma = vec![Mat::zeros(d, d); d];
    for k in 0..d {
        for l in 0..d {
            let c = ginv[(k, l)];
            if c != 0.0 {
                gamma[k] += &lower[l] * c;
            }
        }
    }
    Ok((ginv, gamma))
}

/// Ricci tensor `R_ij = d_k G^k_ij - d_j G^k_ik + G^k_kl G^l_ij - G^k_jl G^l_ik`.
pub fn ricci(jet: &MetricJet) -> Result<Mat> {
    let d = jet.g.nrows();
    let ddg = jet.ddg.as_ref().expect("second derivatives required");
    let (ginv, gamma) = christoffel(jet)?;
    // derivative of Gamma^k_ij along m
    let dginv: Vec<Mat> = jet.dg.iter().map(|a| -(&ginv * a * &ginv)).collect();
    let mut dgamma = vec![vec![Mat::zeros(d, d); d]; d]; // dgamma[m][k]
    for m in 0..d {
        for l in 0..d {
            let mut low = Mat::zeros(d, d);
            let mut dlow = Mat::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    low[(i, j)] = 0.5 * (jet.dg[i][(j, l)] + jet.dg[j][(i, l)] - jet.dg[l][(i, j)]);
                    dlow[(i, j)] = 0.5 * (ddg[m][i][(j, l)] + ddg[m][j][(i, l)] - ddg[m][l][(i, j)]);
                }
            }
            for k in 0..d {
                dgamma[m][k] += &low * dginv[m][(k, l)] + &dlow * ginv[(k, l)];
            }
        }
    }
    let mut r = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut v = 0.0;
            for k in 0..d {
                v += dgamma[k][k][(i, j)] - dgamma[j][k][(i, k)];
                for l in 0..d {
                    v += gamma[k][(k, l)] * gamma[l][(i, j)] - gamma[k][(j, l)] * gamma[l][(i, k)];
                }
            }
            r[(i, j)] = v;
        }
    }
    Ok((&r + r.transpose()) * 0.5)
}

fn check_metric(p: &[f64], g: &Mat) -> Result<()> {
    let min_eig = SymmetricEigen::new(g.clone()).eigenvalues.min();
    if !(min_eig > 1e-12) {
        return Err(Error::DegenerateMetric { point: p.to_vec(), min_eig });
    }
    Ok(())
}

/// Symplectic form, complex structure, metric, Christoffel symbols and Ricci
/// tensor at `p`. Derivatives are closed form for the flat, Guillemin and round
/// backends and fourth-order central differences otherwise.
pub fn eval_tensors(m: &ChartedManifold, p: &[f64], fd_step: f64) -> Result<TensorEval> {
    eval_tensors_with(m, p, fd_step, true)
}

pub(crate) fn eval_tensors_with(m: &ChartedManifold, p: &[f64], fd_step: f64, with_ricci: bool) -> Result<TensorEval> {
    if m.chart_margin(p) < 2.0 * fd_step {
        return Err(Error::PointOutsideChart { point: p.to_vec() });
    }
    let mm;
    let m = if (m.fd_step - fd_step).abs() > 0.0 {
        mm = ChartedManifold { fd_step, ..m.clone() };
        &mm
    } else {
        m
    };
    let jet = m.metric_jet(p, with_ricci)?;
    check_metric(p, &jet.g)?;
    let omega = m.omega(p)?;
    let acs = omega.clone().try_inverse().ok_or(Error::PointOutsideChart { point: p.to_vec() })? * &jet.g;
    let (_, christoffel) = christoffel(&jet)?;
    let d = p.len();
    let ricci = if with_ricci { ricci(&jet)? } else { Mat::zeros(d, d) };
    Ok(TensorEval { point: p.to_vec(), omega, acs, metric: jet.g, christoffel, ricci })
}

/// Time-`t` flow of the Hamiltonian vector field of `v` from `p`, classical
/// fourth-order Runge-Kutta with `steps` fixed steps.
pub fn hamiltonian_flow(m: &ChartedManifold, v: &dyn ScalarField, t: f64, p: &[f64], steps: usize) -> Result<Vec<f64>> {
    let steps = steps.max(1);
    let dt = t / steps as f64;
    let mut x = p.to_vec();
    let field = |q: &[f64], time: f64| -> Result<Vec<f64>> {
        if m.chart_margin(q) <= 0.0 {
            return Err(Error::FlowLeftAtlas { time });
        }
        m.hamiltonian_vector(v, q)
    };
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * y).collect() };
    for k in 0..steps {
        let time = k as f64 * dt;
        let k1 = field(&x, time)?;
        let k2 = field(&axpy(&x, 0.5 * dt, &k1), time)?;
        let k3 = field(&axpy(&x, 0.5 * dt, &k2), time)?;
        let k4 = field(&axpy(&x, dt, &k3), time)?;
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    if m.chart_margin(&x) <= 0.0 {
        return Err(Error::FlowLeftAtlas { time: t });
    }
    Ok(x)
}

/// Named basis of Killing potentials.
#[derive(Clone, Debug)]
pub struct KillingBasis {
    pub names: Vec<String>,
    pub fields: Vec<Field>,
}

impl KillingBasis {
    pub fn len(&self) -> usize {
        self.fields.len()
    }
    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
    /// Basis with generator `i` removed.
    pub fn without(&self, i: usize) -> Self {
        let mut b = self.clone();
        b.names.remove(i);
        b.fields.remove(i);
        b
    }
}

/// `a . u(z, phi)` on the unit sphere.
#[derive(Debug, Clone, Copy)]
pub struct SphereLinear(pub [f64; 3]);

impl ScalarField for SphereLinear {
    fn value(&self, p: &[f64]) -> f64 {
        let u = sphere_point(p);
        self.0[0] * u[0] + self.0[1] * u[1] + self.0[2] * u[2]
    }
    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let z = p[0];
        let r = (1.0 - z * z).sqrt();
        let (s, c) = p[1].sin_cos();
        let a = self.0;
        vec![-z / r * (a[0] * c + a[1] * s) + a[2], r * (-a[0] * s + a[1] * c)]
    }
}

/// Real or imaginary part of `Z_i conj(Z_j) / |Z|^2` on projective space.
#[derive(Debug, Clone, Copy)]
pub struct ProjectivePotential {
    pub n: usize,
    pub chart: CpChart,
    pub i: usize,
    pub j: usize,
    pub imaginary: bool,
}

impl ScalarField for ProjectivePotential {
    fn value(&self, p: &[f64]) -> f64 {
        let n = self.n;
        let (re, im) = match self.chart {
            CpChart::Affine => {
                let zc = |k: usize| if k == 0 { (1.0, 0.0) } else { (p[k - 1], p[n + k - 1]) };
                let total = 1.0 + p.iter().map(|a| a * a).sum::<f64>();
                let (a, b) = zc(self.i);
                let (c, d) = zc(self.j);
                // (a + ib)(c - id)
                ((a * c + b * d) / total, (b * c - a * d) / total)
            }
            CpChart::ActionAngle => {
                let mu = |k: usize| if k == 0 { 1.0 - p[..n].iter().sum::<f64>() } else { p[k - 1] };
                let th = |k: usize| if k == 0 { 0.0 } else { p[n + k - 1] };
                let r = (mu(self.i).max(0.0) * mu(self.j).max(0.0)).sqrt();
                let a = th(self.i) - th(self.j);
                (r * a.cos(), r * a.sin())
            }
        };
        if self.imaginary {
            im
        } else {
            re
        }
    }
}

/// Basis of potentials of Hamiltonian isometries of the reference structure
/// (a perturbation, if any, is ignored).
pub fn killing_potentials(m: &ChartedManifold) -> Result<KillingBasis> {
    let d = m.real_dimension();
    let mut names = vec!["1".to_string()];
    let mut fields: Vec<Field> = vec![Arc::new(Constant(1.0))];
    match &m.backend {
        Backend::FlatTorus { .. } => {}
        Backend::Toric(p) if p.is_standard_simplex() => {
            return killing_potentials(&ChartedManifold::projective(p.dim, CpChart::ActionAngle));
        }
        Backend::ProjectiveSpace { n, chart } => {
            names.clear();
            fields.clear();
            for i in 0..=*n {
                for j in i..=*n {
                    for imaginary in [false, true] {
                        if i == j && imaginary {
                            continue;
                        }
                        names.push(format!("{}(Z{i} Z{j}*)", if imaginary { "Im" } else { "Re" }));
                        fields.push(Arc::new(ProjectivePotential { n: *n, chart: *chart, i, j, imaginary }));
                    }
                }
            }
        }
        Backend::SurfaceOfRevolution(s) => {
            if s.is_round() {
                for (k, name) in ["x", "y", "z"].iter().enumerate() {
                    let mut a = [0.0; 3];
                    a[k] = 1.0;
                    names.push(name.to_string());
                    fields.push(Arc::new(SphereLinear(a)));
                }
            } else if let Some(axis) = s.revolution_axis() {
                names.push("axial".into());
                fields.push(Arc::new(SphereLinear(axis)));
            }
        }
        Backend::Toric(p) => {
            for i in 0..p.dim {
                names.push(format!("x{}", i + 1));
                fields.push(Arc::new(Affine::coordinate(d, i)));
            }
        }
    }
    Ok(KillingBasis { names, fields })
}

/// Gram matrix of fields in `L^2(M)` by tensor quadrature over the chart
/// (Liouville measure of the Darboux chart).
pub fn l2_gram(m: &ChartedManifold, fields: &[Field]) -> Result<Mat> {
    let n = m.n();
    let k = fields.len();
    let mut nodes: Vec<(Vec<f64>, f64)> = Vec::new();
    let angles = 12usize;
    let push_product = |xs: &[(Vec<f64>, f64)], nodes: &mut Vec<(Vec<f64>, f64)>, periods: &[f64]| {
        let total: usize = angles.pow(n as u32);
        for (x, w) in xs {
            for idx in 0..total {
                let mut p = x.clone();
                let mut rest = idx;
                for per in periods {
                    p.push((rest % angles) as f64 * per / angles as f64);
                    rest /= angles;
                }
                let wa: f64 = periods.iter().map(|per| per / angles as f64).product();
                nodes.push((p, w * wa));
            }
        }
    };
    match &m.backend {
        Backend::FlatTorus { periods } => {
            let xs = box_nodes(&vec![0.0; n], &periods[..n], 12, |_| true);
            push_product(&xs, &mut nodes, &periods[n..]);
        }
        Backend::SurfaceOfRevolution(_) => {
            let xs = box_nodes(&[-1.0], &[1.0], 32, |_| true);
            push_product(&xs, &mut nodes, &[2.0 * PI]);
        }
        Backend::ProjectiveSpace { chart: CpChart::Affine, .. } => {
            return Err(Error::UnsupportedBackend { backend: "affine chart quadrature".into() })
        }
        _ => {
            let atlas = m.chart_atlas();
            let poly = m.polytope().unwrap();
            let xs = box_nodes(&atlas[0].lower[..n], &atlas[0].upper[..n], 24, |x| poly.margin(x) > 0.0);
            push_product(&xs, &mut nodes, &vec![2.0 * PI; n]);
        }
    }
    let mut gram = Mat::zeros(k, k);
    for (p, w) in &nodes {
        let vals: Vec<f64> = fields.iter().map(|f| f.value(p)).collect();
        for a in 0..k {
            for b in 0..=a {
                gram[(a, b)] += w * vals[a] * vals[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    Ok(gram)
}

fn box_nodes(lo: &[f64], hi: &[f64], per_axis: usize, keep: impl Fn(&[f64]) -> bool) -> Vec<(Vec<f64>, f64)> {
    let (gx, gw) = gauss_legendre(per_axis);
    let dim = lo.len();
    let total = per_axis.pow(dim as u32);
    let mut out = Vec::new();
    for idx in 0..total {
        let mut rest = idx;
        let mut p = Vec::with_capacity(dim);
        let mut w = 1.0;
        for a in 0..dim {
            let i = rest % per_axis;
            rest /= per_axis;
            let half = 0.5 * (hi[a] - lo[a]);
            p.push(lo[a] + half * (gx[i] + 1.0));
            w *= half * gw[i];
        }
        if keep(&p) {
            out.push((p, w));
        }
    }
    out
}

/// Closure helper for ad hoc potentials.
pub fn potential<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F) -> Field {
    Arc::new(FnField(f))
}

/// Ambient Laplace-Beltrami `Delta f = -g^{ij}(d_i d_j f - Gamma^k_ij d_k f)`.
pub fn laplacian(m: &ChartedManifold, f: &dyn ScalarField, p: &[f64]) -> Result<f64> {
    let t = eval_tensors_with(m, p, m.fd_step, false)?;
    let ginv = t.metric.clone().try_inverse().ok_or(Error::DegenerateMetric { point: p.to_vec(), min_eig: 0.0 })?;
    let hess = f.hessian(p);
    let grad = f.gradient(p);
    let d = p.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut cov = hess[(i, j)];
            for k in 0..d {
                cov -= t.christoffel[k][(i, j)] * grad[k];
            }
            s += ginv[(i, j)] * cov;
        }
    }
    Ok(-s)
}
