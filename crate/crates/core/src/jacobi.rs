//! The fourth-order second-variation operator of the volume along Hamiltonian
//! deformations: assembly in a truncated Fourier basis, spectrum, kernel,
//! rigidity and stability verdicts.

use crate::error::{Error, Result};
use crate::fields::Field;
use crate::kahler::{killing_potentials, l2_gram, KillingBasis, Mat};
use crate::lagrangian::{
    codifferential, deform_by, differential, immersion_geometry, laplacian, volume, ImmersionGeometry,
    TorusImmersion,
};
use crate::spectral::{FourierBasis, Grid};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoxSource {
    AnalyticKahler,
    FiniteDifferenceVolume,
}

/// Matrix of the operator in an `L^2(g_L)`-orthonormalized Fourier basis.
#[derive(Debug, Clone)]
pub struct BoxOperator {
    pub basis: FourierBasis,
    /// `M^{-1/2} A M^{-1/2}`, with `A_ij = <phi_i, Box phi_j>` and `M` the mass matrix.
    pub matrix: Mat,
    pub stiffness: Mat,
    pub mass: Mat,
    pub source: BoxSource,
    pub grid: Grid,
    /// Orthonormalized matrix of `-JH.JH.` (analytic assembly only).
    pub transport: Option<Mat>,
    /// Sup norm of `div(JH)` on the grid (analytic assembly only).
    pub divergence_jh: Option<f64>,
}

fn inverse_sqrt(m: &Mat) -> Result<Mat> {
    let e = m.clone().symmetric_eigen();
    if e.eigenvalues.min() <= 0.0 {
        return Err(Error::EigenSolverFailure("mass matrix not positive definite".into()));
    }
    let d = Mat::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Ok(&e.eigenvectors * d * e.eigenvectors.transpose())
}

fn weights(grid: &Grid, geom: &ImmersionGeometry) -> Vec<f64> {
    geom.nodes.iter().map(|g| g.sqrt_det * grid.weight()).collect()
}

fn weighted_gram(phi: &Mat, w: &[f64], other: &Mat) -> Mat {
    let mut wp = phi.clone();
    for (k, wk) in w.iter().enumerate() {
        wp.row_mut(k).scale_mut(*wk);
    }
    wp.transpose() * other
}

fn asymmetry(m: &Mat) -> f64 {
    let n = m.norm();
    if n == 0.0 {
        0.0
    } else {
        (m - m.transpose()).norm() / n
    }
}

impl BoxOperator {
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// `||A - A^T|| / ||A||` in Frobenius norm.
    pub fn asymmetry(&self) -> f64 {
        asymmetry(&self.matrix)
    }

    /// `<Box u, u>` for `u = sum c_i phi_i`.
    pub fn quadratic_form(&self, coeffs: &[f64]) -> f64 {
        let c = DVector::from_column_slice(coeffs);
        (c.transpose() * &self.stiffness * &c)[0]
    }

    /// Basis coefficients of an orthonormalized coordinate vector.
    pub fn coefficients(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(inverse_sqrt(&self.mass)? * v)
    }

    /// Grid values of `sum c_i phi_i`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let phi = self.basis.on_grid(&self.grid);
        (&phi * DVector::from_column_slice(coeffs)).iter().copied().collect()
    }
}

/// Pointwise linear maps for the curvature terms and the `JH` field.
struct BoxCoefficients {
    ricci: Vec<Mat>,
    second: Vec<Mat>,
    jh: Vec<Vec<f64>>,
}

fn box_coefficients(geom: &ImmersionGeometry) -> BoxCoefficients {
    let mut ricci = Vec::with_capacity(geom.nodes.len());
    let mut second = Vec::with_capacity(geom.nodes.len());
    let mut jh = Vec::with_capacity(geom.nodes.len());
    for g in &geom.nodes {
        let t = &g.ambient;
        let e = &g.tangent;
        let d = e.nrows();
        let n = e.ncols();
        let ginv = t.metric.clone().try_inverse().unwrap_or_else(|| Mat::identity(d, d));
        let proj_n = Mat::identity(d, d) - e * &g.inverse * e.transpose() * &t.metric;
        let omega_e = &t.omega * e;
        // beta = (Omega E)^T P_N g^{-1} Ric J E g_L^{-1} du
        ricci.push(omega_e.transpose() * &proj_n * &ginv * &t.ricci * &t.acs * e * &g.inverse);
        let x = &g.inverse * e.transpose() * &t.metric * (&t.acs * &g.mean_curvature);
        let mut bx = Mat::zeros(d, n);
        for b in 0..n {
            for a in 0..n {
                let col = &g.second_fundamental[a][b] * x[a];
                let mut c = bx.column_mut(b);
                c += col;
            }
        }
        second.push(omega_e.transpose() * bx * &g.inverse);
        jh.push(x.iter().copied().collect());
    }
    BoxCoefficients { ricci, second, jh }
}

fn apply_linear(maps: &[Mat], du: &[Vec<f64>]) -> Vec<Vec<f64>> {
    maps.iter()
        .zip(du)
        .map(|(m, v)| (m * DVector::from_column_slice(v)).iter().copied().collect())
        .collect()
}

fn directional(grid: &Grid, field: &[Vec<f64>], u: &[f64]) -> Vec<f64> {
    let du = differential(grid, u);
    field.iter().zip(&du).map(|(x, d)| x.iter().zip(d).map(|(a, b)| a * b).sum()).collect()
}

/// The four terms of the operator applied to a grid function.
struct BoxTerms {
    bilaplacian: Vec<f64>,
    ricci: Vec<f64>,
    second: Vec<f64>,
    transport: Vec<f64>,
}

fn apply_terms(grid: &Grid, geom: &ImmersionGeometry, c: &BoxCoefficients, u: &[f64]) -> BoxTerms {
    let du = differential(grid, u);
    let lap = laplacian(grid, &geom.nodes, u);
    let bilaplacian = laplacian(grid, &geom.nodes, &lap);
    let ricci = codifferential(grid, &geom.nodes, &apply_linear(&c.ricci, &du));
    let second = codifferential(grid, &geom.nodes, &apply_linear(&c.second, &du)).iter().map(|v| -2.0 * v).collect();
    let w = directional(grid, &c.jh, u);
    let transport = directional(grid, &c.jh, &w).iter().map(|v| -v).collect();
    BoxTerms { bilaplacian, ricci, second, transport }
}

/// Applies the operator to a grid function.
pub fn apply_box(l: &TorusImmersion, u: &[f64]) -> Result<Vec<f64>> {
    let geom = immersion_geometry(l, true)?;
    let c = box_coefficients(&geom);
    let t = apply_terms(&l.grid, &geom, &c, u);
    Ok((0..u.len()).map(|k| t.bilaplacian[k] + t.ricci[k] + t.second[k] + t.transport[k]).collect())
}

pub fn default_max_mode(grid: &Grid) -> usize {
    grid.size / 2 - 1
}

/// Analytic assembly from the Kähler formula
/// `Delta^2 u + d* alpha_{Ric(J grad u)} - 2 d* alpha_{B(JH, grad u)} - JH.JH.u`.
pub fn assemble_box(l: &TorusImmersion, max_mode: Option<usize>) -> Result<BoxOperator> {
    if !l.manifold.is_integrable() {
        return Err(Error::NonIntegrableBackend);
    }
    let m = max_mode.unwrap_or_else(|| default_max_mode(&l.grid));
    if l.grid.size < 2 * m + 2 {
        return Err(Error::QuadratureUnderResolved { grid: l.grid.size, modes: m });
    }
    let geom = immersion_geometry(l, true)?;
    let coeffs = box_coefficients(&geom);
    let basis = FourierBasis::new(l.n, m);
    let phi = basis.on_grid(&l.grid);
    let grid = &l.grid;
    let cols: Vec<(Vec<f64>, Vec<f64>)> = (0..basis.len())
        .into_par_iter()
        .map(|j| {
            let u: Vec<f64> = phi.column(j).iter().copied().collect();
            let t = apply_terms(grid, &geom, &coeffs, &u);
            let total = (0..u.len()).map(|k| t.bilaplacian[k] + t.ricci[k] + t.second[k] + t.transport[k]).collect();
            (total, t.transport)
        })
        .collect();
    let rows = grid.len();
    let boxed = Mat::from_fn(rows, basis.len(), |k, j| cols[j].0[k]);
    let trans = Mat::from_fn(rows, basis.len(), |k, j| cols[j].1[k]);
    let w = weights(grid, &geom);
    let stiffness = weighted_gram(&phi, &w, &boxed);
    let mass = weighted_gram(&phi, &w, &phi);
    let s = inverse_sqrt(&mass)?;
    let matrix = &s * &stiffness * &s;
    let transport = &s * weighted_gram(&phi, &w, &trans) * &s;
    // div(JH) = -d*(JH^flat)
    let flat: Vec<Vec<f64>> = geom
        .nodes
        .iter()
        .zip(&coeffs.jh)
        .map(|(g, x)| (&g.metric * DVector::from_column_slice(x)).iter().copied().collect())
        .collect();
    let div = codifferential(grid, &geom.nodes, &flat).iter().fold(0.0f64, |a, b| a.max(b.abs()));
    Ok(BoxOperator {
        basis,
        matrix,
        stiffness,
        mass,
        source: BoxSource::AnalyticKahler,
        grid: grid.clone(),
        transport: Some(transport),
        divergence_jh: Some(div),
    })
}

/// Second variation of volume along Hamiltonian deformations by central
/// differences and polarization, symmetrized.
pub fn box_fd(l: &TorusImmersion, h: f64, max_mode: usize) -> Result<BoxOperator> {
    if l.grid.size < 2 * max_mode + 2 {
        return Err(Error::QuadratureUnderResolved { grid: l.grid.size, modes: max_mode });
    }
    let basis = FourierBasis::new(l.n, max_mode);
    let phi = basis.on_grid(&l.grid);
    let b = basis.len();
    let v0 = volume(l)?;
    let col = |j: usize| -> Vec<f64> { phi.column(j).iter().copied().collect() };
    let q = |u: &[f64]| -> Result<f64> {
        let up: Vec<f64> = u.iter().map(|v| h * v).collect();
        let um: Vec<f64> = u.iter().map(|v| -h * v).collect();
        Ok((volume(&deform_by(l, &up)?)? - 2.0 * v0 + volume(&deform_by(l, &um)?)?) / (h * h))
    };
    let diag: Vec<f64> = (1..b).into_par_iter().map(|i| q(&col(i))).collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (1..b).flat_map(|i| (1..i).map(move |j| (i, j))).collect();
    // polarization: <u_i, u_j> = (Q(u_i + u_j) - Q(u_i) - Q(u_j)) / 2
    let entries: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let plus: Vec<f64> = col(i).iter().zip(&col(j)).map(|(a, c)| a + c).collect();
            Ok((q(&plus)? - diag[i - 1] - diag[j - 1]) / 2.0)
        })
        .collect::<Result<_>>()?;
    let mut stiffness = Mat::zeros(b, b);
    for i in 1..b {
        stiffness[(i, i)] = diag[i - 1];
    }
    for (&(i, j), v) in pairs.iter().zip(&entries) {
        stiffness[(i, j)] = *v;
        stiffness[(j, i)] = *v;
    }
    let sq = crate::lagrangian::induced_geometry(l)?.sqrt_det;
    let w: Vec<f64> = sq.iter().map(|s| s * l.grid.weight()).collect();
    let mass = weighted_gram(&phi, &w, &phi);
    let s = inverse_sqrt(&mass)?;
    let matrix = &s * &stiffness * &s;
    Ok(BoxOperator {
        basis,
        matrix,
        stiffness,
        mass,
        source: BoxSource::FiniteDifferenceVolume,
        grid: l.grid.clone(),
        transport: None,
        divergence_jh: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<f64>,
    pub kernel_dimension: usize,
    /// Orthonormal kernel vectors in the orthonormalized basis coordinates.
    #[serde(skip)]
    pub kernel_basis: Vec<DVector<f64>>,
    pub min_nonkernel_eigenvalue: f64,
    pub kernel_tol: f64,
    pub asymmetry: f64,
}

impl SpectralReport {
    /// CSV with columns `index, eigenvalue, kernel`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["index", "eigenvalue", "kernel"]).expect("in-memory write");
        for (i, v) in self.eigenvalues.iter().enumerate() {
            w.write_record(&[i.to_string(), format!("{v:?}"), (v.abs() < self.kernel_tol).to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

pub const KERNEL_TOL_FACTOR: f64 = 1e-6;

/// Symmetric eigendecomposition of the symmetrized matrix. The kernel is the
/// span of eigenvectors with `|lambda| < kernel_tol` (default `1e-6` times the
/// largest eigenvalue magnitude).
pub fn spectrum(op: &BoxOperator, kernel_tol: Option<f64>) -> Result<SpectralReport> {
    let sym = (&op.matrix + op.matrix.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenSolverFailure("non-finite matrix entries".into()));
    }
    let e = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..e.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let largest = eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let tol = kernel_tol.unwrap_or(KERNEL_TOL_FACTOR * largest);
    let mut kernel_basis = Vec::new();
    let mut min_nonkernel = f64::INFINITY;
    for &i in &order {
        let v = e.eigenvalues[i];
        if v.abs() < tol {
            kernel_basis.push(e.eigenvectors.column(i).into_owned());
        } else {
            min_nonkernel = min_nonkernel.min(v);
        }
    }
    Ok(SpectralReport {
        eigenvalues,
        kernel_dimension: kernel_basis.len(),
        kernel_basis,
        min_nonkernel_eigenvalue: min_nonkernel,
        kernel_tol: tol,
        asymmetry: op.asymmetry(),
    })
}

#[derive(Debug, Clone)]
pub struct RigidityReport {
    pub rigid: bool,
    pub rank: usize,
    pub kernel_dimension: usize,
    pub singular_values: Vec<f64>,
    /// Projection of restricted Killing potentials on the kernel, `kernel x killing`.
    pub restriction: Mat,
    pub killing: KillingBasis,
    /// Basis of a complement of the kernel of the restriction map, as
    /// coefficient vectors over `killing`.
    pub complement: Vec<DVector<f64>>,
}

impl RigidityReport {
    /// Fields spanning the complement.
    pub fn complement_fields(&self) -> Vec<Field> {
        self.complement
            .iter()
            .map(|c| {
                let terms: Vec<(f64, Field)> =
                    c.iter().zip(&self.killing.fields).map(|(a, f)| (*a, f.clone())).collect();
                std::sync::Arc::new(crate::fields::Combination(terms)) as Field
            })
            .collect()
    }
}

/// Rank of the restriction of Killing potentials onto the kernel.
pub fn rigidity_check(l: &TorusImmersion, op: &BoxOperator, report: &SpectralReport) -> Result<RigidityReport> {
    let killing = killing_potentials(&l.manifold)?;
    rigidity_check_with(l, op, report, killing)
}

pub fn rigidity_check_with(
    l: &TorusImmersion,
    op: &BoxOperator,
    report: &SpectralReport,
    killing: KillingBasis,
) -> Result<RigidityReport> {
    let phi = op.basis.on_grid(&l.grid);
    let sq = crate::lagrangian::induced_geometry(l)?.sqrt_det;
    let w: Vec<f64> = sq.iter().map(|s| s * l.grid.weight()).collect();
    let restricted = Mat::from_fn(l.grid.len(), killing.len(), |k, j| killing.fields[j].value(&l.values[k]));
    let s = inverse_sqrt(&op.mass)?;
    let coords = &s * weighted_gram(&phi, &w, &restricted);
    let kd = report.kernel_dimension;
    let kernel = Mat::from_fn(op.len(), kd, |i, a| report.kernel_basis[a][i]);
    let restriction = kernel.transpose() * &coords;
    let svd = restriction.clone().svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let scale = coords.norm().max(1e-300);
    let rank = sv.iter().filter(|&&v| v > 1e-6 * scale).count();
    // kernel of the full restriction map l^*, then its L^2(M) complement
    let full = coords;
    let fsvd = full.clone().svd(false, true);
    let vt = fsvd.v_t.clone().unwrap();
    let fscale = fsvd.singular_values.iter().fold(0.0f64, |a, b| a.max(*b)).max(1e-300);
    let mut null = Vec::new();
    let dim = killing.len();
    let mut taken = vec![false; dim];
    for (i, v) in fsvd.singular_values.iter().enumerate() {
        if *v <= 1e-8 * fscale {
            taken[i] = true;
            null.push(vt.row(i).transpose().into_owned());
        }
    }
    // rows of vt beyond the singular value count are also null directions
    if vt.nrows() < dim {
        let q = Mat::identity(dim, dim) - vt.transpose() * &vt;
        let e = q.symmetric_eigen();
        for i in 0..dim {
            if e.eigenvalues[i] > 0.5 {
                null.push(e.eigenvectors.column(i).into_owned());
            }
        }
    }
    let complement = if null.is_empty() {
        (0..dim).map(|i| DVector::from_fn(dim, |j, _| if i == j { 1.0 } else { 0.0 })).collect()
    } else {
        let gram = match l2_gram(&l.manifold, &killing.fields) {
            Ok(g) => g,
            Err(_) => Mat::identity(dim, dim),
        };
        let z = Mat::from_fn(dim, null.len(), |i, a| null[a][i]);
        // complement = { a : z^T G a = 0 }
        let c = (z.transpose() * &gram).transpose();
        let csvd = c.clone().transpose().svd(false, true);
        let vt = csvd.v_t.unwrap();
        let proj = Mat::identity(dim, dim) - vt.transpose() * &vt;
        let e = proj.symmetric_eigen();
        (0..dim).filter(|&i| e.eigenvalues[i] > 0.5).map(|i| e.eigenvectors.column(i).into_owned()).collect()
    };
    Ok(RigidityReport { rigid: rank == kd, rank, kernel_dimension: kd, singular_values: sv, restriction, killing, complement })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub margin: f64,
}

pub fn stability_check(report: &SpectralReport) -> StabilityVerdict {
    StabilityVerdict { stable: report.min_nonkernel_eigenvalue > 0.0, margin: report.min_nonkernel_eigenvalue }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfadjointReport {
    /// Relative asymmetry of `Box + JH.JH.`.
    pub d_part_asymmetry: f64,
    pub full_asymmetry: f64,
    /// Max absolute entry of `A - A^T` on the given low modes.
    pub low_mode_asymmetry: f64,
    pub divergence_jh: f64,
    /// RMS of `div(JH)` against the volume form.
    pub divergence_rms: f64,
    pub transport_norm: f64,
}

/// Asymmetry of the selfadjoint part and of the full operator, the discrete
/// divergence of `JH`, and the size of the transport term.
pub fn selfadjoint_diagnostics(l: &TorusImmersion, op: &BoxOperator, low_mode: usize) -> Result<SelfadjointReport> {
    let transport = op.transport.as_ref().ok_or(Error::NonIntegrableBackend)?;
    let d = &op.matrix - transport;
    let geom = immersion_geometry(l, false)?;
    let c = box_coefficients_jh(&geom);
    let flat: Vec<Vec<f64>> = geom
        .nodes
        .iter()
        .zip(&c)
        .map(|(g, x)| (&g.metric * DVector::from_column_slice(x)).iter().copied().collect())
        .collect();
    let div: Vec<f64> = codifferential(&l.grid, &geom.nodes, &flat).iter().map(|v| -v).collect();
    let sq = geom.sqrt_det();
    let rms = (l.grid.integrate(&div.iter().map(|v| v * v).collect::<Vec<_>>(), &sq) / geom.maslov.volume).sqrt();
    let low: Vec<usize> = (0..op.len())
        .filter(|&i| op.basis.elements[i].0.iter().all(|k| k.unsigned_abs() as usize <= low_mode))
        .collect();
    let mut low_asym = 0.0f64;
    for &i in &low {
        for &j in &low {
            low_asym = low_asym.max((op.matrix[(i, j)] - op.matrix[(j, i)]).abs());
        }
    }
    Ok(SelfadjointReport {
        d_part_asymmetry: asymmetry(&d),
        full_asymmetry: op.asymmetry(),
        low_mode_asymmetry: low_asym,
        divergence_jh: div.iter().fold(0.0f64, |a, b| a.max(b.abs())),
        divergence_rms: rms,
        transport_norm: transport.norm(),
    })
}

fn box_coefficients_jh(geom: &ImmersionGeometry) -> Vec<Vec<f64>> {
    geom.nodes
        .iter()
        .map(|g| {
            let t = &g.ambient;
            let x = &g.inverse * g.tangent.transpose() * &t.metric * (&t.acs * &g.mean_curvature);
            x.iter().copied().collect()
        })
        .collect()
}

/// Kernel functions of the spectral report as grid values.
pub fn kernel_functions(op: &BoxOperator, report: &SpectralReport) -> Result<Vec<Vec<f64>>> {
    report.kernel_basis.iter().map(|v| Ok(op.synthesize(op.coefficients(v)?.as_slice()))).collect()
}
