//! Delzant polytopes, the Guillemin metric in action-angle coordinates,
//! moment fibers, and volume bookkeeping for torus reductions of flat space.

use crate::error::{Error, Result};
use crate::kahler::{Backend, ChartedManifold};
use crate::lagrangian::TorusImmersion;
use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

const BOUNDARY_TOL: f64 = 1e-12;
const VERTEX_TOL: f64 = 1e-9;

/// Facets `l_k(x) = <normal_k, x> + offset_k >= 0` with integer normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledPolytope {
    pub dim: usize,
    pub normals: Vec<Vec<i64>>,
    pub offsets: Vec<f64>,
    /// Rows are a basis of the lattice; `None` means the standard lattice.
    #[serde(default)]
    pub lattice: Option<Vec<Vec<i64>>>,
}

impl LabelledPolytope {
    pub fn new(normals: Vec<Vec<i64>>, offsets: Vec<f64>) -> Self {
        let dim = normals.first().map_or(0, |v| v.len());
        LabelledPolytope { dim, normals, offsets, lattice: None }
    }

    /// `{x >= 0, 1 - sum x >= 0}`, the moment polytope of CP^n.
    pub fn simplex(n: usize) -> Self {
        let mut normals = Vec::new();
        let mut offsets = Vec::new();
        for i in 0..n {
            let mut v = vec![0; n];
            v[i] = 1;
            normals.push(v);
            offsets.push(0.0);
        }
        normals.push(vec![-1; n]);
        offsets.push(1.0);
        Self::new(normals, offsets)
    }

    /// The interval `[0, c]`.
    pub fn interval(c: f64) -> Self {
        Self::new(vec![vec![1], vec![-1]], vec![0.0, c])
    }

    /// The box `prod [0, c_i]`.
    pub fn cube(sides: &[f64]) -> Self {
        let n = sides.len();
        let mut normals = Vec::new();
        let mut offsets = Vec::new();
        for (i, &c) in sides.iter().enumerate() {
            let mut v = vec![0; n];
            v[i] = 1;
            normals.push(v.clone());
            offsets.push(0.0);
            v[i] = -1;
            normals.push(v);
            offsets.push(c);
        }
        Self::new(normals, offsets)
    }

    pub fn facet_values(&self, x: &[f64]) -> Vec<f64> {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(nu, c)| nu.iter().zip(x).map(|(a, b)| *a as f64 * b).sum::<f64>() + c)
            .collect()
    }

    /// Smallest facet value, positive in the interior.
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.facet_values(x).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn is_standard_simplex(&self) -> bool {
        *self == Self::simplex(self.dim)
    }

    /// Average of the vertices.
    pub fn barycenter(&self) -> Result<Vec<f64>> {
        let verts = vertices(self)?;
        let mut b = vec![0.0; self.dim];
        for v in &verts {
            for (bi, vi) in b.iter_mut().zip(&v.point) {
                *bi += vi / verts.len() as f64;
            }
        }
        Ok(b)
    }

    /// Parse the text format:
    ///
    /// ```text
    /// # comment
    /// dim 2
    /// facet 1 0 : 0
    /// facet 0 1 : 0
    /// facet -1 -1 : 1
    /// lattice 1 0
    /// lattice 0 1
    /// ```
    ///
    /// Offsets may be written as reals or as rationals `p/q`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::PolytopeParse(msg);
        let mut dim = None;
        let mut normals = Vec::new();
        let mut offsets = Vec::new();
        let mut lattice = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let ints = |s: &str| -> Result<Vec<i64>> {
                s.split_whitespace()
                    .map(|t| t.parse::<i64>().map_err(|e| bad(format!("line {}: {e}", lineno + 1))))
                    .collect()
            };
            match key {
                "dim" => {
                    dim = Some(rest.trim().parse::<usize>().map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?)
                }
                "facet" => {
                    let (nu, c) = rest
                        .split_once(':')
                        .ok_or_else(|| bad(format!("line {}: facet needs ':' before the offset", lineno + 1)))?;
                    normals.push(ints(nu)?);
                    offsets.push(parse_number(c.trim()).ok_or_else(|| bad(format!("line {}: bad offset", lineno + 1)))?);
                }
                "lattice" => lattice.push(ints(rest)?),
                other => return Err(bad(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        let dim = dim.or_else(|| normals.first().map(|v| v.len())).ok_or_else(|| bad("no facets".into()))?;
        if normals.iter().any(|v| v.len() != dim) || lattice.iter().any(|v| v.len() != dim) {
            return Err(bad("vector length does not match dim".into()));
        }
        if !lattice.is_empty() && lattice.len() != dim {
            return Err(bad("lattice needs exactly dim rows".into()));
        }
        Ok(LabelledPolytope { dim, normals, offsets, lattice: if lattice.is_empty() { None } else { Some(lattice) } })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("dim {}\n", self.dim);
        for (nu, c) in self.normals.iter().zip(&self.offsets) {
            let v: Vec<String> = nu.iter().map(|a| a.to_string()).collect();
            s.push_str(&format!("facet {} : {:?}\n", v.join(" "), c));
        }
        if let Some(l) = &self.lattice {
            for row in l {
                let v: Vec<String> = row.iter().map(|a| a.to_string()).collect();
                s.push_str(&format!("lattice {}\n", v.join(" ")));
            }
        }
        s
    }
}

fn parse_number(s: &str) -> Option<f64> {
    if let Some((p, q)) = s.split_once('/') {
        let p: f64 = p.trim().parse().ok()?;
        let q: f64 = q.trim().parse().ok()?;
        (q != 0.0).then_some(p / q)
    } else {
        s.parse().ok()
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Vertex {
    pub point: Vec<f64>,
    /// Indices of the facets through this vertex.
    pub facets: Vec<usize>,
    /// Determinant of the facet normals in lattice coordinates.
    pub det: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DelzantReport {
    pub vertices: Vec<Vertex>,
    pub compact: bool,
    pub simple: bool,
    pub unimodular: bool,
    pub valid: bool,
}

fn normal_matrix(p: &LabelledPolytope, facets: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(facets.len(), p.dim, |r, c| p.normals[facets[r]][c] as f64)
}

/// Vertices by brute-force intersection of facet subsets.
pub fn vertices(p: &LabelledPolytope) -> Result<Vec<Vertex>> {
    let n = p.dim;
    let mut found: Vec<Vertex> = Vec::new();
    for subset in combinations(p.normals.len(), n) {
        let a = normal_matrix(p, &subset);
        let b = DVector::from_iterator(n, subset.iter().map(|&k| -p.offsets[k]));
        let lu = a.clone().lu();
        if a.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(x) = lu.solve(&b) else { continue };
        let x: Vec<f64> = x.iter().copied().collect();
        if p.facet_values(&x).iter().any(|&v| v < -VERTEX_TOL) {
            continue;
        }
        if found.iter().any(|v| v.point.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9)) {
            continue;
        }
        let facets: Vec<usize> =
            p.facet_values(&x).iter().enumerate().filter(|(_, v)| v.abs() < VERTEX_TOL).map(|(k, _)| k).collect();
        let det = if facets.len() == n { lattice_det(p, &facets) } else { f64::NAN };
        found.push(Vertex { point: x, facets, det });
    }
    Ok(found)
}

fn lattice_det(p: &LabelledPolytope, facets: &[usize]) -> f64 {
    let d = normal_matrix(p, facets).determinant();
    match &p.lattice {
        None => d,
        Some(rows) => {
            let b = DMatrix::from_fn(p.dim, p.dim, |r, c| rows[r][c] as f64);
            d / b.determinant()
        }
    }
}

/// Recession cone `{d : <normal_k, d> >= 0}` is trivial.
fn is_compact(p: &LabelledPolytope) -> bool {
    let n = p.dim;
    let all = normal_matrix(p, &(0..p.normals.len()).collect::<Vec<_>>());
    if all.rank(1e-10) < n {
        return false;
    }
    let feasible = |d: &DVector<f64>| (0..p.normals.len()).all(|k| (all.row(k) * d)[0] >= -1e-12);
    if n == 1 {
        return !feasible(&DVector::from_element(1, 1.0)) && !feasible(&DVector::from_element(1, -1.0));
    }
    for subset in combinations(p.normals.len(), n - 1) {
        let a = normal_matrix(p, &subset);
        if a.rank(1e-10) < n - 1 {
            continue;
        }
        // generalized cross product spans the null space of the n-1 rows
        let d = DVector::from_fn(n, |i, _| {
            let minor = a.clone().remove_column(i);
            if i % 2 == 0 { minor.determinant() } else { -minor.determinant() }
        });
        let d = d.normalize();
        if feasible(&d) || feasible(&(-d)) {
            return false;
        }
    }
    true
}

/// Checks compactness, simplicity and the lattice-basis condition at every vertex.
pub fn validate_delzant(p: &LabelledPolytope) -> Result<DelzantReport> {
    if p.normals.is_empty() || p.normals.len() != p.offsets.len() {
        return Err(Error::PolytopeParse("need matching normals and offsets".into()));
    }
    if !is_compact(p) {
        return Err(Error::NonCompact);
    }
    let verts = vertices(p)?;
    if verts.len() < p.dim + 1 {
        return Err(Error::NonCompact);
    }
    for v in &verts {
        if v.facets.len() != p.dim {
            return Err(Error::NonSimpleVertex { vertex: v.point.clone(), facets: v.facets.len() });
        }
    }
    for v in &verts {
        if (v.det.abs() - 1.0).abs() > 1e-9 {
            return Err(Error::NonUnimodularVertex { vertex: v.point.clone(), det: v.det });
        }
    }
    Ok(DelzantReport { vertices: verts, compact: true, simple: true, unimodular: true, valid: true })
}

/// Guillemin potential and its Hessian at an interior point.
#[derive(Debug, Clone)]
pub struct GuilleminData {
    pub potential: f64,
    pub hessian: DMatrix<f64>,
    pub inverse_hessian: DMatrix<f64>,
}

/// Evaluates `u = 1/2 sum l_k log l_k`, `G = Hess u` and `G^{-1}`.
pub fn guillemin_metric(p: &LabelledPolytope, x: &[f64]) -> Result<GuilleminData> {
    let ls = p.facet_values(x);
    if ls.iter().any(|&l| l <= BOUNDARY_TOL) {
        return Err(Error::BoundaryPoint { point: x.to_vec() });
    }
    let potential = 0.5 * ls.iter().map(|l| l * l.ln()).sum::<f64>();
    let hessian = guillemin_hessian(p, &ls);
    let inverse_hessian = hessian.clone().try_inverse().ok_or(Error::DegenerateMetric { point: x.to_vec(), min_eig: 0.0 })?;
    Ok(GuilleminData { potential, hessian, inverse_hessian })
}

fn guillemin_hessian(p: &LabelledPolytope, ls: &[f64]) -> DMatrix<f64> {
    let n = p.dim;
    let mut g = DMatrix::zeros(n, n);
    for (nu, l) in p.normals.iter().zip(ls) {
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] += 0.5 * (nu[i] * nu[j]) as f64 / l;
            }
        }
    }
    g
}

/// `G`, `dG/dx_k` and `d2G/dx_k dx_l`, all closed form.
pub(crate) fn guillemin_jet(
    p: &LabelledPolytope,
    x: &[f64],
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>, Vec<Vec<DMatrix<f64>>>)> {
    let n = p.dim;
    let ls = p.facet_values(x);
    if ls.iter().any(|&l| l <= BOUNDARY_TOL) {
        return Err(Error::PointOutsideChart { point: x.to_vec() });
    }
    let g = guillemin_hessian(p, &ls);
    let mut dg = vec![DMatrix::zeros(n, n); n];
    let mut ddg = vec![vec![DMatrix::zeros(n, n); n]; n];
    for (nu, l) in p.normals.iter().zip(&ls) {
        let nu: Vec<f64> = nu.iter().map(|&a| a as f64).collect();
        for i in 0..n {
            for j in 0..n {
                let base = nu[i] * nu[j];
                for k in 0..n {
                    dg[k][(i, j)] += -0.5 * base * nu[k] / (l * l);
                    for m in 0..n {
                        ddg[k][m][(i, j)] += base * nu[k] * nu[m] / (l * l * l);
                    }
                }
            }
        }
    }
    Ok((g, dg, ddg))
}

/// The moment fiber over `x0` as the immersion `theta -> (x0, theta)` in
/// action-angle coordinates of the Guillemin metric.
pub fn moment_fiber(p: &LabelledPolytope, x0: &[f64], grid: usize) -> Result<TorusImmersion> {
    if p.margin(x0) <= BOUNDARY_TOL {
        return Err(Error::BoundaryPoint { point: x0.to_vec() });
    }
    let m = ChartedManifold::new(Backend::Toric(p.clone()));
    Ok(fiber_in_action_angle(m, x0, grid))
}

/// Fiber `{x0} x T^n` in any action-angle chart `(x_1..x_n, theta_1..theta_n)`.
pub fn fiber_in_action_angle(m: ChartedManifold, x0: &[f64], grid: usize) -> TorusImmersion {
    let n = x0.len();
    let mut winding = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        winding[(n + i, i)] = 1.0;
    }
    TorusImmersion::from_fn(m, n, grid, winding, |_theta| {
        let mut v = x0.to_vec();
        v.extend(std::iter::repeat_n(0.0, n));
        v
    })
}

/// `[Z_0 : ... : Z_n] -> (|Z_i|^2 / sum |Z_j|^2)`.
pub fn cpn_moment_map(z: &[Complex<f64>]) -> Result<Vec<f64>> {
    let total: f64 = z.iter().map(|c| c.norm_sqr()).sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(z.iter().map(|c| c.norm_sqr() / total).collect())
}

/// Volume of the orbit through `z` of the subtorus of `T^d` whose Lie algebra
/// is spanned by the integer columns of `iota`, in the flat metric of `C^d`.
/// The columns must be a basis of a saturated sublattice.
pub fn orbit_volume(iota: &DMatrix<i64>, z: &[Complex<f64>]) -> Result<f64> {
    let d = z.len();
    let k = iota.ncols();
    if iota.nrows() != d {
        return Err(Error::DegenerateOrbit);
    }
    // orbit metric sum |z_j|^2 dtheta_j^2 pulled back to the subtorus
    let w: DMatrix<f64> = DMatrix::from_fn(k, k, |a, b| (0..d).map(|j| (iota[(j, a)] * iota[(j, b)]) as f64 * z[j].norm_sqr()).sum());
    let scale: f64 = z.iter().map(|c| c.norm_sqr()).sum::<f64>().max(f64::MIN_POSITIVE);
    let det = w.determinant();
    if !(det > 1e-14 * scale.powi(k as i32)) {
        return Err(Error::DegenerateOrbit);
    }
    Ok((2.0 * std::f64::consts::PI).powi(k as i32) * det.sqrt())
}

/// Value of the moment map of the subtorus, `iota^T mu` with `mu_j = |z_j|^2 / 2`.
pub fn subtorus_moment(iota: &DMatrix<i64>, z: &[Complex<f64>]) -> Vec<f64> {
    (0..iota.ncols()).map(|a| (0..z.len()).map(|j| iota[(j, a)] as f64 * 0.5 * z[j].norm_sqr()).sum()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ReductionReport {
    pub kappa: f64,
    pub volumes: Vec<f64>,
    /// `(max - min) / mean` over the sampled level set.
    pub relative_spread: f64,
    pub level: Vec<f64>,
}

/// Orbit volume over samples of one level set, with its spread. Samples off the
/// level of the first one are rejected.
pub fn reduction_volume_factor(iota: &DMatrix<i64>, samples: &[Vec<Complex<f64>>]) -> Result<ReductionReport> {
    let first = samples.first().ok_or(Error::DegenerateOrbit)?;
    let level = subtorus_moment(iota, first);
    let mut volumes = Vec::with_capacity(samples.len());
    for (i, z) in samples.iter().enumerate() {
        let mu = subtorus_moment(iota, z);
        let dev = mu.iter().zip(&level).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = level.iter().map(|a| a.abs()).fold(1e-300, f64::max);
        if dev > 1e-9 * scale {
            return Err(Error::OffLevelSet { index: i, deviation: dev });
        }
        volumes.push(orbit_volume(iota, z)?);
    }
    let mean = volumes.iter().sum::<f64>() / volumes.len() as f64;
    let max = volumes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = volumes.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ReductionReport { kappa: mean, volumes, relative_spread: (max - min) / mean, level })
}
