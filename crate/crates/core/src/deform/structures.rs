//! Compatible structures near the reference one: explicit anti-invariant
//! perturbations, structures sampled on a band mesh, the positive path and the
//! quartic bump potential.

use crate::error::{Error, Result};
use crate::fields::{Field, ScalarField};
use crate::kahler::{eval_tensors_with, surface_metric, Backend, ChartedManifold, CpChart, Mat, StructureField, Surface};
use crate::lagrangian::{immersion_geometry, tube_radius, TorusImmersion, Tube, TubePoint};
use crate::spectral::Grid;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

fn sym_sqrt(m: &Mat) -> (Mat, Mat) {
    let e = m.clone().symmetric_eigen();
    let s = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    let si = s.map(|v| 1.0 / v);
    (
        &e.eigenvectors * Mat::from_diagonal(&s) * e.eigenvectors.transpose(),
        &e.eigenvectors * Mat::from_diagonal(&si) * e.eigenvectors.transpose(),
    )
}

/// `max |J^2 + 1|` for `J = Omega^{-1} g`.
pub fn compatibility_defect(g: &Mat, omega: &Mat) -> f64 {
    let j = omega.clone().try_inverse().map(|o| o * g).unwrap_or_else(|| Mat::zeros(g.nrows(), g.ncols()));
    let id = Mat::identity(g.nrows(), g.ncols());
    (&j * &j + id).amax()
}

/// Nearest compatible metric in the polar sense: with
/// `K = g^{1/2} Omega^{-1} g^{1/2}`, returns `g^{1/2} (-K^2)^{-1/2} g^{1/2}`.
pub fn retract(g: &Mat, omega: &Mat) -> Mat {
    let g = (g + g.transpose()) * 0.5;
    let (h, _) = sym_sqrt(&g);
    let oi = omega.clone().try_inverse().expect("symplectic form is invertible");
    let k = &h * oi * &h;
    let (_, inv) = sym_sqrt(&(-(&k * &k)));
    let out = &h * inv * &h;
    (&out + out.transpose()) * 0.5
}

/// `g' = g^{1/2} exp(g^{-1/2} h g^{-1/2}) g^{1/2}` where `h` is the part of a
/// prescribed symmetric form `T(p)` anti-invariant under the base structure.
#[derive(Clone)]
pub struct AntiInvariantField {
    label: String,
    form: Arc<dyn Fn(&[f64]) -> Mat + Send + Sync>,
}

impl AntiInvariantField {
    pub fn new(label: impl Into<String>, form: impl Fn(&[f64]) -> Mat + Send + Sync + 'static) -> Self {
        AntiInvariantField { label: label.into(), form: Arc::new(form) }
    }

    /// `T = amplitude * profile(p) * e_0 e_0^T`.
    pub fn squeeze(dim: usize, amplitude: f64, profile: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(format!("squeeze({amplitude:e})"), move |p| {
            let mut t = Mat::zeros(dim, dim);
            t[(0, 0)] = amplitude * profile(p);
            t
        })
    }

    /// Anti-invariant part of `T` with respect to `J = Omega^{-1} g`.
    pub fn anti_invariant(t: &Mat, g: &Mat, omega: &Mat) -> Mat {
        let j = omega.clone().try_inverse().expect("symplectic form is invertible") * g;
        (t - j.transpose() * t * &j) * 0.5
    }
}

impl StructureField for AntiInvariantField {
    fn metric(&self, p: &[f64], reference: &Mat, omega: &Mat) -> Mat {
        let t = (self.form)(p);
        let t = (&t + t.transpose()) * 0.5;
        let h = Self::anti_invariant(&t, reference, omega);
        let (r, ri) = sym_sqrt(reference);
        let s = &ri * h * &ri;
        let e = ((&s + s.transpose()) * 0.5).symmetric_eigen();
        let ex = &e.eigenvectors * Mat::from_diagonal(&e.eigenvalues.map(f64::exp)) * e.eigenvectors.transpose();
        let g = &r * ex * &r;
        (&g + g.transpose()) * 0.5
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Applies structure fields in order, each on top of the previous result.
#[derive(Clone)]
pub struct Composite(pub Vec<Arc<dyn StructureField>>);

impl StructureField for Composite {
    fn metric(&self, p: &[f64], reference: &Mat, omega: &Mat) -> Mat {
        self.0.iter().fold(reference.clone(), |g, f| f.metric(p, &g, omega))
    }

    fn describe(&self) -> String {
        self.0.iter().map(|f| f.describe()).collect::<Vec<_>>().join(" + ")
    }
}

/// The area-normalized metric of an ellipsoid, used as a structure on the
/// round sphere chart `(z, phi)`.
#[derive(Debug, Clone)]
pub struct SurfaceStructure(pub Surface);

impl StructureField for SurfaceStructure {
    fn metric(&self, p: &[f64], _reference: &Mat, _omega: &Mat) -> Mat {
        surface_metric(&self.0, p)
    }

    fn describe(&self) -> String {
        format!("ellipsoid {:?}", self.0.axes)
    }
}

/// Largest relative deviation `|g' - g|_op / |g|_op` over sample points.
pub fn perturbation_size(m: &ChartedManifold, points: &[Vec<f64>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for p in points {
        let g0 = m.reference_metric(p)?;
        let g = m.metric(p)?;
        let (_, ri) = sym_sqrt(&g0);
        let rel = &ri * (&g - &g0) * &ri;
        let e = ((&rel + rel.transpose()) * 0.5).symmetric_eigenvalues();
        worst = worst.max(e.amax());
    }
    Ok(worst)
}

const EDGE_COLLAR: f64 = 0.05;

/// Uniform tensor grid on `[lo, hi] x S^1`, periodic in both directions.
/// Functions sampled on it must vanish near `x = lo` and `x = hi`.
#[derive(Debug, Clone)]
pub struct BandMesh {
    pub lo: f64,
    pub hi: f64,
    pub xs: Vec<f64>,
    pub across: Grid,
    pub angles: Grid,
}

impl BandMesh {
    pub fn new(lo: f64, hi: f64, intervals: usize, angles: usize) -> Self {
        let nx = intervals.max(4) + intervals % 2;
        let xs = (0..nx).map(|i| lo + (hi - lo) * i as f64 / nx as f64).collect();
        BandMesh { lo, hi, xs, across: Grid::new(1, nx), angles: Grid::new(1, angles) }
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.angles.size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node `i + nx j` is `(xs[i], theta_j)`.
    pub fn node(&self, idx: usize) -> [f64; 2] {
        let nx = self.xs.len();
        [self.xs[idx % nx], (idx / nx) as f64 * self.angles.spacing()]
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    /// Smooth window, `0` at the band edges and `1` away from a collar of
    /// width `EDGE_COLLAR * (hi - lo)`.
    pub fn window(&self, x: f64) -> f64 {
        let collar = EDGE_COLLAR * (self.hi - self.lo);
        let t = (x - self.lo).min(self.hi - x) / collar;
        1.0 - smooth_cutoff(t, 0.0)
    }

    /// Indices of the nodes inside the edge collars.
    pub fn edge_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.window(self.node(k)[0]) < 1.0).collect()
    }

    fn x_weights(&self, x: f64) -> Vec<f64> {
        periodic_sinc(self.xs.len(), 2.0 * PI * (x - self.lo) / (self.hi - self.lo))
    }

    fn theta_weights(&self, theta: f64) -> Vec<f64> {
        periodic_sinc(self.angles.size, theta)
    }

    /// Interpolated value of a mesh function at `(x, theta)`.
    pub fn interpolate(&self, f: &[f64], x: f64, theta: f64) -> f64 {
        let wx = self.x_weights(x);
        let wt = self.theta_weights(theta);
        let nx = self.xs.len();
        let mut s = 0.0;
        for (j, b) in wt.iter().enumerate() {
            let mut row = 0.0;
            for (i, a) in wx.iter().enumerate() {
                row += a * f[i + nx * j];
            }
            s += b * row;
        }
        s
    }

    pub fn derivative_x(&self, f: &[f64]) -> Vec<f64> {
        let nx = self.xs.len();
        let scale = 2.0 * PI / (self.hi - self.lo);
        let mut out = vec![0.0; f.len()];
        for j in 0..self.angles.size {
            let d = self.across.derivative(&f[nx * j..nx * (j + 1)], 0);
            for i in 0..nx {
                out[i + nx * j] = scale * d[i];
            }
        }
        out
    }

    pub fn derivative_theta(&self, f: &[f64]) -> Vec<f64> {
        let nx = self.xs.len();
        let nt = self.angles.size;
        let mut out = vec![0.0; f.len()];
        for i in 0..nx {
            let line: Vec<f64> = (0..nt).map(|j| f[i + nx * j]).collect();
            let d = self.angles.derivative(&line, 0);
            for j in 0..nt {
                out[i + nx * j] = d[j];
            }
        }
        out
    }
}

/// Weights of the trigonometric interpolant on `n` uniform nodes of `[0, 2 pi)`.
fn periodic_sinc(n: usize, theta: f64) -> Vec<f64> {
    let h = 2.0 * PI / n as f64;
    (0..n)
        .map(|j| {
            let t = (theta - j as f64 * h).rem_euclid(2.0 * PI);
            let t = if t > PI { t - 2.0 * PI } else { t };
            if t.abs() < 1e-14 {
                1.0
            } else {
                (n as f64 * t / 2.0).sin() / (n as f64 * (t / 2.0).tan())
            }
        })
        .collect()
}

/// Metric correction sampled on a band mesh; `(g11, g12, g22)` per node.
#[derive(Clone)]
pub struct MeshStructure {
    pub mesh: Arc<BandMesh>,
    pub delta: Arc<Vec<[f64; 3]>>,
    pub label: String,
}

impl MeshStructure {
    fn correction(&self, p: &[f64]) -> Option<Mat> {
        if !self.mesh.contains(p[0]) {
            return None;
        }
        let comp = |c: usize| {
            let f: Vec<f64> = self.delta.iter().map(|v| v[c]).collect();
            self.mesh.interpolate(&f, p[0], p[1])
        };
        let w = self.mesh.window(p[0]);
        let (a, b, c) = (w * comp(0), w * comp(1), w * comp(2));
        Some(Mat::from_row_slice(2, 2, &[a, b, b, c]))
    }

    /// Max over nodes of the relative size of the correction.
    pub fn mesh_norm(&self, reference: &ChartedManifold) -> Result<f64> {
        let mut worst = 0.0f64;
        for (k, d) in self.delta.iter().enumerate() {
            let p = self.mesh.node(k);
            let g0 = reference.reference_metric(&p)?;
            let (_, ri) = sym_sqrt(&g0);
            let dm = Mat::from_row_slice(2, 2, &[d[0], d[1], d[1], d[2]]);
            worst = worst.max(((&ri * dm * &ri).symmetric_eigenvalues()).amax());
        }
        Ok(worst)
    }
}

impl StructureField for MeshStructure {
    fn metric(&self, p: &[f64], reference: &Mat, omega: &Mat) -> Mat {
        match self.correction(p) {
            None => reference.clone(),
            Some(d) => retract(&(reference + d), omega),
        }
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

fn band_chart(m: &ChartedManifold) -> Result<()> {
    let ok = match &m.backend {
        Backend::SurfaceOfRevolution(_) => true,
        Backend::ProjectiveSpace { n: 1, chart: CpChart::ActionAngle } => true,
        Backend::Toric(p) => p.dim == 1,
        _ => false,
    };
    if ok && m.real_dimension() == 2 {
        Ok(())
    } else {
        Err(Error::UnsupportedBackend { backend: format!("{:?} (band meshes need a surface chart)", m.backend) })
    }
}

/// Mesh and step controls for [`integrate_positive_path`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PathOptions {
    pub band: (f64, f64),
    pub intervals: usize,
    pub angles: usize,
    pub s_max: f64,
    pub steps: usize,
    /// Largest tolerated `|J^2 + 1|` before re-projection in one step.
    pub drift_tol: f64,
}

impl PathOptions {
    pub fn new(band: (f64, f64), s_max: f64, steps: usize) -> Self {
        PathOptions { band, intervals: 192, angles: 16, s_max, steps, drift_tol: 1e-3 }
    }
}

/// Structures `J_s`, `s` on a uniform grid, solving
/// `dJ/ds = -L_X J + J L_X J` with `X` the Hamiltonian field of `phi`.
#[derive(Clone)]
pub struct PerturbationPath {
    pub reference: ChartedManifold,
    pub potential: Field,
    pub mesh: Arc<BandMesh>,
    pub s_grid: Vec<f64>,
    pub deltas: Vec<Arc<Vec<[f64; 3]>>>,
    /// Largest compatibility defect removed by re-projection, per step.
    pub drift: Vec<f64>,
}

impl PerturbationPath {
    fn structure(&self, delta: Arc<Vec<[f64; 3]>>, s: f64) -> Arc<dyn StructureField> {
        Arc::new(MeshStructure { mesh: self.mesh.clone(), delta, label: format!("positive path s = {s}") })
    }

    /// Structure at `s`, linearly interpolated between stored steps.
    pub fn structure_at(&self, s: f64) -> Result<Option<Arc<dyn StructureField>>> {
        let last = *self.s_grid.last().unwrap();
        if s == 0.0 {
            return Ok(None);
        }
        if s < 0.0 || s > last * (1.0 + 1e-12) {
            return Err(Error::ConfigInvalid(format!("s = {s} outside [0, {last}]")));
        }
        let ds = self.s_grid[1] - self.s_grid[0];
        let pos = s / ds;
        let k = pos.floor() as usize;
        if (pos - pos.round()).abs() < 1e-9 {
            let k = pos.round() as usize;
            return Ok(Some(self.structure(self.deltas[k].clone(), s)));
        }
        let w = pos - k as f64;
        let mixed: Vec<[f64; 3]> = self.deltas[k]
            .iter()
            .zip(self.deltas[k + 1].iter())
            .map(|(a, b)| [0, 1, 2].map(|c| (1.0 - w) * a[c] + w * b[c]))
            .collect();
        Ok(Some(self.structure(Arc::new(mixed), s)))
    }

    pub fn manifold_at(&self, s: f64) -> Result<ChartedManifold> {
        Ok(match self.structure_at(s)? {
            None => self.reference.clone(),
            Some(f) => self.reference.clone().with_perturbation(f),
        })
    }

    pub fn mesh_norm(&self, s: f64) -> Result<f64> {
        match self.structure_at(s)? {
            None => Ok(0.0),
            Some(_) => {
                let ds = self.s_grid[1] - self.s_grid[0];
                let k = ((s / ds).round() as usize).min(self.deltas.len() - 1);
                MeshStructure { mesh: self.mesh.clone(), delta: self.deltas[k].clone(), label: String::new() }
                    .mesh_norm(&self.reference)
            }
        }
    }
}

struct NodeData {
    g0: Mat,
    dg0: [Mat; 2],
    x: DVector<f64>,
    dx: Mat,
}

fn to_mat(d: &[f64; 3]) -> Mat {
    Mat::from_row_slice(2, 2, &[d[0], d[1], d[1], d[2]])
}

fn path_rate(mesh: &BandMesh, data: &[NodeData], omega: &Mat, delta: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let oi = omega.clone().try_inverse().unwrap();
    let comps: Vec<Vec<f64>> = (0..3).map(|c| delta.iter().map(|v| v[c]).collect()).collect();
    let dxs: Vec<Vec<f64>> = comps.iter().map(|f| mesh.derivative_x(f)).collect();
    let dts: Vec<Vec<f64>> = comps.iter().map(|f| mesh.derivative_theta(f)).collect();
    (0..delta.len())
        .into_par_iter()
        .map(|k| {
            let nd = &data[k];
            let g = &nd.g0 + to_mat(&delta[k]);
            let j = &oi * &g;
            let dj = [
                &oi * (&nd.dg0[0] + to_mat(&[dxs[0][k], dxs[1][k], dxs[2][k]])),
                &oi * (&nd.dg0[1] + to_mat(&[dts[0][k], dts[1][k], dts[2][k]])),
            ];
            // (L_X J) = X^k d_k J - DX J + J DX
            let lie = &dj[0] * nd.x[0] + &dj[1] * nd.x[1] - &nd.dx * &j + &j * &nd.dx;
            let jdot = -&lie + &j * &lie;
            let gdot = omega * jdot;
            let gdot = (&gdot + gdot.transpose()) * 0.5;
            [gdot[(0, 0)], gdot[(0, 1)], gdot[(1, 1)]]
        })
        .collect()
}

/// Integrates `dJ_s/ds = -L_X J_s + J_s L_X J_s` on a band mesh by RK4,
/// re-projecting onto compatible structures after every step.
pub fn integrate_positive_path(m: &ChartedManifold, phi: Field, opts: &PathOptions) -> Result<PerturbationPath> {
    band_chart(m)?;
    let reference = m.reference();
    let mesh = Arc::new(BandMesh::new(opts.band.0, opts.band.1, opts.intervals, opts.angles));
    for x in [opts.band.0, opts.band.1] {
        if reference.chart_margin(&[x, 0.0]) <= 0.0 {
            return Err(Error::PointOutsideChart { point: vec![x, 0.0] });
        }
    }
    let omega = reference.omega(&mesh.node(0))?;
    let oi = omega.clone().try_inverse().unwrap();
    let len = mesh.len();
    let vals: Vec<f64> = (0..len).into_par_iter().map(|k| phi.value(&mesh.node(k))).collect();
    let top = vals.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let edge = mesh.edge_nodes().iter().fold(0.0f64, |a, &k| a.max(vals[k].abs()));
    if edge > 1e-12 * top.max(1e-300) {
        return Err(Error::ConfigInvalid(format!("potential does not vanish at the band edges ({edge:e})")));
    }
    let fx = mesh.derivative_x(&vals);
    let ft = mesh.derivative_theta(&vals);
    let fxx = mesh.derivative_x(&fx);
    let fxt = mesh.derivative_theta(&fx);
    let ftt = mesh.derivative_theta(&ft);
    let data: Vec<NodeData> = (0..len)
        .map(|k| {
            let p = mesh.node(k);
            let jet = reference.metric_jet(&p, false)?;
            let grad = DVector::from_column_slice(&[fx[k], ft[k]]);
            let hess = Mat::from_row_slice(2, 2, &[fxx[k], fxt[k], fxt[k], ftt[k]]);
            Ok(NodeData {
                g0: jet.g.clone(),
                dg0: [jet.dg[0].clone(), jet.dg[1].clone()],
                x: -(&oi * grad),
                dx: -(&oi * hess),
            })
        })
        .collect::<Result<_>>()?;
    let steps = opts.steps.max(1);
    let ds = opts.s_max / steps as f64;
    let mut delta = vec![[0.0; 3]; len];
    let mut deltas = vec![Arc::new(delta.clone())];
    let mut drift = Vec::with_capacity(steps);
    let add = |a: &[[f64; 3]], s: f64, b: &[[f64; 3]]| -> Vec<[f64; 3]> {
        a.iter().zip(b).map(|(x, y)| [0, 1, 2].map(|c| x[c] + s * y[c])).collect()
    };
    for _ in 0..steps {
        let k1 = path_rate(&mesh, &data, &omega, &delta);
        let k2 = path_rate(&mesh, &data, &omega, &add(&delta, 0.5 * ds, &k1));
        let k3 = path_rate(&mesh, &data, &omega, &add(&delta, 0.5 * ds, &k2));
        let k4 = path_rate(&mesh, &data, &omega, &add(&delta, ds, &k3));
        let mut worst = 0.0f64;
        for k in 0..len {
            let raw = [0, 1, 2].map(|c| delta[k][c] + ds / 6.0 * (k1[k][c] + 2.0 * k2[k][c] + 2.0 * k3[k][c] + k4[k][c]));
            let g = &data[k].g0 + to_mat(&raw);
            worst = worst.max(compatibility_defect(&g, &omega));
            let fixed = retract(&g, &omega) - &data[k].g0;
            delta[k] = [fixed[(0, 0)], fixed[(0, 1)], fixed[(1, 1)]];
        }
        if worst > opts.drift_tol {
            return Err(Error::ConstraintDriftExceeded { drift: worst });
        }
        drift.push(worst);
        deltas.push(Arc::new(delta.clone()));
    }
    let s_grid = (0..=steps).map(|k| k as f64 * ds).collect();
    Ok(PerturbationPath { reference, potential: phi, mesh, s_grid, deltas, drift })
}

/// Which first-order structure variation to linearize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariationMode {
    /// `J' = -L_X J`, metric variation `-2 D^- d^c phi`.
    Lie,
    /// `J' = -J L_X J`, metric variation `2 D^- d phi`.
    TwistedLie,
}

/// `(B - J^T B J) / 2`.
pub fn anti_invariant_part(b: &Mat, j: &Mat) -> Mat {
    (b - j.transpose() * b * j) * 0.5
}

/// Covariant Hessian `d_i d_j phi - Gamma^k_ij d_k phi` and `J` at `p`.
pub fn covariant_hessian(m: &ChartedManifold, phi: &dyn ScalarField, p: &[f64]) -> Result<(Mat, Mat)> {
    let t = eval_tensors_with(m, p, m.fd_step, false)?;
    let h = phi.hessian(p);
    let grad = phi.gradient(p);
    let d = p.len();
    let cov = Mat::from_fn(d, d, |i, j| h[(i, j)] - (0..d).map(|k| t.christoffel[k][(i, j)] * grad[k]).sum::<f64>());
    Ok(((&cov + cov.transpose()) * 0.5, t.acs))
}

/// First-order metric variation of the Kähler structure of `m` along the
/// structure variation selected by `mode`.
pub fn metric_variation(m: &ChartedManifold, phi: &dyn ScalarField, mode: VariationMode, p: &[f64]) -> Result<Mat> {
    if !m.is_integrable() {
        return Err(Error::NonIntegrableBackend);
    }
    let (hess, j) = covariant_hessian(m, phi, p)?;
    Ok(match mode {
        // D d^c phi (X, Y) = -D d phi (X, J Y) on a Kähler manifold
        VariationMode::Lie => anti_invariant_part(&-(&hess * &j), &j) * -2.0,
        VariationMode::TwistedLie => anti_invariant_part(&hess, &j) * 2.0,
    })
}

/// Metric velocity of the positive path at `s = 0`.
pub fn path_metric_rate(m: &ChartedManifold, phi: &dyn ScalarField, p: &[f64]) -> Result<Mat> {
    Ok(metric_variation(m, phi, VariationMode::TwistedLie, p)? - metric_variation(m, phi, VariationMode::Lie, p)?)
}

/// `d/ds vol_{J_s}(L)` at `s = 0` from the pointwise metric velocity:
/// `1/2 int tr(g_L^{-1} E^T g' E)`.
pub fn volume_rate(l: &TorusImmersion, phi: &dyn ScalarField) -> Result<f64> {
    let geom = immersion_geometry(l, false)?;
    let m = l.manifold.reference();
    let dens: Result<Vec<f64>> = geom
        .nodes
        .par_iter()
        .zip(&l.values)
        .map(|(g, p)| {
            let rate = path_metric_rate(&m, phi, p)?;
            let tangential = g.tangent.transpose() * rate * &g.tangent;
            Ok(0.5 * (&g.inverse * tangential).trace() * g.sqrt_det)
        })
        .collect();
    Ok(dens?.iter().sum::<f64>() * l.grid.weight())
}

/// Smooth step, `1` on `[0, plateau]` and `0` on `[1, inf)`.
pub fn smooth_cutoff(t: f64, plateau: f64) -> f64 {
    if t <= plateau {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    let tau = (t - plateau) / (1.0 - plateau);
    let a = (-1.0 / (1.0 - tau)).exp();
    let b = (-1.0 / tau).exp();
    a / (a + b)
}

/// `phi = -d^4 / (4 (n + 2))` with `d` the length of the normal coordinate in
/// the tube around an immersion, cut off smoothly at `radius`.
pub struct QuarticBump {
    tube: Tube,
    nodes: Vec<Vec<f64>>,
    params: Vec<Vec<f64>>,
    periods: Vec<Option<f64>>,
    pub n: usize,
    pub radius: f64,
    /// Fraction of the radius on which the bump is exactly quartic.
    pub plateau: f64,
}

impl QuarticBump {
    /// Normal distance to the immersion, if `q` lies in the tube.
    pub fn distance(&self, q: &[f64]) -> Option<f64> {
        let mut best = (f64::INFINITY, 0usize, Vec::new());
        for (k, v) in self.nodes.iter().enumerate() {
            let diff: Vec<f64> = q
                .iter()
                .zip(v)
                .zip(&self.periods)
                .map(|((a, b), per)| {
                    let d = a - b;
                    match per {
                        Some(p) => d - p * (d / p).round(),
                        None => d,
                    }
                })
                .collect();
            let norm: f64 = diff.iter().map(|x| x * x).sum();
            if norm < best.0 {
                best = (norm, k, diff);
            }
        }
        let (_, k, diff) = best;
        let target: Vec<f64> = self.nodes[k].iter().zip(&diff).map(|(a, b)| a + b).collect();
        let tp = self.tube.locate(&target, &TubePoint::at(self.params[k].clone()))?;
        let (x, _) = self.tube.map(&tp.theta, &tp.s);
        let miss = x.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if miss > 1e-10 {
            return None;
        }
        let d = self.tube.normal_length(&tp);
        (d < 2.0 * self.radius).then_some(d)
    }

    pub fn coefficient(&self) -> f64 {
        1.0 / (4.0 * (self.n as f64 + 2.0))
    }
}

impl ScalarField for QuarticBump {
    fn value(&self, q: &[f64]) -> f64 {
        match self.distance(q) {
            Some(d) if d < self.radius => -d.powi(4) * self.coefficient() * smooth_cutoff(d / self.radius, self.plateau),
            _ => 0.0,
        }
    }
}

/// Quartic bump around `l` with the default tube radius.
pub fn bump_quartic_potential(l: &TorusImmersion) -> Result<QuarticBump> {
    let geom = immersion_geometry(l, false)?;
    let radius = tube_radius(l, &geom);
    bump_with_radius(l, radius)
}

pub fn bump_with_radius(l: &TorusImmersion, radius: f64) -> Result<QuarticBump> {
    if !(radius > 1e-8) {
        return Err(Error::TubeTooSmall { radius, displacement: 0.0 });
    }
    let geom = immersion_geometry(l, false)?;
    let f = vec![0.0; l.grid.len()];
    Ok(QuarticBump {
        tube: Tube::new(l, &geom, &f, radius),
        nodes: l.values.clone(),
        params: l.grid.nodes(),
        periods: l.manifold.periods(),
        n: l.n,
        radius,
        plateau: 0.25,
    })
}
