//! The relative problem: for a perturbed structure, deform a seed by a
//! Hamiltonian potential until the mean-curvature residual lies in the
//! restrictions of the Killing potentials. On top of it: the modified volume
//! along a group orbit, its minimization and continuation along a family.

use crate::error::{Error, Result};
use crate::fields::{Combination, Field};
use crate::jacobi::{assemble_box, default_max_mode, rigidity_check, spectrum};
use crate::kahler::{killing_potentials, l2_gram, ChartedManifold, Mat};
use crate::lagrangian::{deform_by, immersion_geometry, TorusImmersion};
use crate::spectral::FourierBasis;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// `L^2` norm of the residual off the obstruction space.
    pub residual_tol: f64,
    /// Sup norm of `d* alpha_H` accepted as stationary.
    pub hslag_tol: f64,
    /// Gradient norm of the modified volume at a critical point.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub condition_max: f64,
    /// Smallest Hessian eigenvalue counted as non-degenerate.
    pub degeneracy_tol: f64,
    /// Largest `|l^* omega|` accepted for an immersion.
    pub lagrangian_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { residual_tol: 1e-8, hslag_tol: 1e-6, grad_tol: 1e-7, max_iter: 25, condition_max: 1e10, degeneracy_tol: 1e-6, lagrangian_tol: 1e-8 }
    }
}

/// Seed, target structure and obstruction potentials.
#[derive(Clone)]
pub struct RelativeHslagProblem {
    pub manifold: ChartedManifold,
    pub seed: TorusImmersion,
    /// Potentials spanning a complement of the kernel of restriction to the seed.
    pub obstruction: Vec<Field>,
    pub max_mode: Option<usize>,
    pub tol: Tolerances,
}

impl RelativeHslagProblem {
    /// The seed must be a rigid stationary torus of the reference structure.
    pub fn new(manifold: &ChartedManifold, seed: &TorusImmersion) -> Result<Self> {
        let reference_seed = seed.with_manifold(manifold.reference());
        let op = assemble_box(&reference_seed, None)?;
        let spectral = spectrum(&op, None)?;
        let rig = rigidity_check(&reference_seed, &op, &spectral)?;
        if !rig.rigid {
            return Err(Error::ObstructionRankLoss { rank: rig.rank, expected: rig.kernel_dimension });
        }
        Ok(RelativeHslagProblem {
            manifold: manifold.clone(),
            seed: reference_seed,
            obstruction: rig.complement_fields(),
            max_mode: None,
            tol: Tolerances::default(),
        })
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RelativeSolution {
    pub immersion: TorusImmersion,
    /// Sum of the Newton corrections, sampled on the seed grid.
    pub potential: Vec<f64>,
    /// Part of `d* alpha_H` along the restricted obstruction potentials.
    pub obstruction: Vec<f64>,
    /// Its coefficients over the restricted obstruction potentials.
    pub obstruction_coefficients: Vec<f64>,
    /// `L^2` norm of the residual off the obstruction space.
    pub residual: f64,
    pub residual_sup: f64,
    pub history: Vec<f64>,
    pub iterations: usize,
    pub condition: f64,
    pub volume: f64,
}

struct Split {
    perp: Vec<f64>,
    along: Vec<f64>,
    coefficients: Vec<f64>,
    norm: f64,
    restricted: Vec<Vec<f64>>,
}

fn split_residual(l: &TorusImmersion, problem: &RelativeHslagProblem, r: &[f64], w: &[f64]) -> Result<Split> {
    let restricted: Vec<Vec<f64>> = problem.obstruction.iter().map(|f| l.restrict(f.as_ref())).collect();
    let k = restricted.len();
    let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(w).map(|((x, y), z)| x * y * z).sum::<f64>();
    let gram = Mat::from_fn(k, k, |i, j| ip(&restricted[i], &restricted[j]));
    let rhs = DVector::from_fn(k, |i, _| ip(&restricted[i], r));
    let e = gram.clone().symmetric_eigen();
    let top = e.eigenvalues.iter().fold(0.0f64, |a, b| a.max(*b)).max(1e-300);
    let rank = e.eigenvalues.iter().filter(|&&v| v > 1e-12 * top).count();
    if rank < k {
        return Err(Error::ObstructionRankLoss { rank, expected: k });
    }
    let coefficients = gram.lu().solve(&rhs).ok_or(Error::ObstructionRankLoss { rank, expected: k })?;
    let along: Vec<f64> =
        (0..r.len()).map(|node| (0..k).map(|i| coefficients[i] * restricted[i][node]).sum()).collect();
    let perp: Vec<f64> = r.iter().zip(&along).map(|(a, b)| a - b).collect();
    let norm = ip(&perp, &perp).max(0.0).sqrt();
    Ok(Split { perp, along, coefficients: coefficients.iter().copied().collect(), norm, restricted })
}

fn inverse_sqrt(m: &Mat) -> Result<Mat> {
    let e = m.clone().symmetric_eigen();
    if e.eigenvalues.min() <= 0.0 {
        return Err(Error::EigenSolverFailure("mass matrix not positive definite".into()));
    }
    Ok(&e.eigenvectors * Mat::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v.sqrt())) * e.eigenvectors.transpose())
}

/// Newton step `h = Box^+ P r` restricted to the complement of the obstruction.
fn newton_step(
    l: &TorusImmersion,
    problem: &RelativeHslagProblem,
    split: &Split,
    w: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let op = if l.manifold.is_integrable() {
        assemble_box(l, problem.max_mode)?
    } else {
        assemble_box(&l.with_manifold(l.manifold.reference()), problem.max_mode)?
    };
    let basis: &FourierBasis = &op.basis;
    let phi = basis.on_grid(&l.grid);
    let s = inverse_sqrt(&op.mass)?;
    let project = |f: &[f64]| -> DVector<f64> {
        let wf = DVector::from_iterator(f.len(), f.iter().zip(w).map(|(a, b)| a * b));
        &s * (phi.transpose() * wf)
    };
    let b = basis.len();
    let k = split.restricted.len();
    let y = Mat::from_fn(b, k, |i, j| project(&split.restricted[j])[i]);
    let svd = y.clone().svd(true, false);
    let top = svd.singular_values.iter().fold(0.0f64, |a, v| a.max(*v)).max(1e-300);
    let rank = svd.singular_values.iter().filter(|&&v| v > 1e-6 * top).count();
    if rank < k {
        return Err(Error::ObstructionRankLoss { rank, expected: k });
    }
    let u = svd.u.unwrap();
    let q = u.columns(0, k).into_owned();
    let e = (Mat::identity(b, b) - &q * q.transpose()).symmetric_eigen();
    let keep: Vec<usize> = (0..b).filter(|&i| e.eigenvalues[i] > 0.5).collect();
    let c = Mat::from_fn(b, keep.len(), |i, j| e.eigenvectors[(i, keep[j])]);
    let reduced = c.transpose() * &op.matrix * &c;
    let sv = reduced.clone().svd(false, false).singular_values;
    let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(a, b), v| (a.max(*v), b.min(*v)));
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= problem.tol.condition_max) {
        return Err(Error::IllConditionedBox { condition });
    }
    let r = c.transpose() * project(&split.perp);
    let x = reduced.lu().solve(&r).ok_or(Error::IllConditionedBox { condition })?;
    let coeffs = &s * (&c * x);
    let h: Vec<f64> = (0..l.grid.len()).map(|node| (0..b).map(|j| phi[(node, j)] * coeffs[j]).sum()).collect();
    Ok((h, condition))
}

pub fn solve_relative_hslag(problem: &RelativeHslagProblem) -> Result<RelativeSolution> {
    solve_relative_from(problem, &problem.seed)
}

/// Newton iteration from `start` (any immersion close to the seed).
pub fn solve_relative_from(problem: &RelativeHslagProblem, start: &TorusImmersion) -> Result<RelativeSolution> {
    let mut l = start.with_manifold(problem.manifold.clone());
    let mut potential = vec![0.0; l.grid.len()];
    let mut history = Vec::new();
    let mut condition = f64::NAN;
    let mut rising = 0usize;
    for iteration in 0..=problem.tol.max_iter {
        let geom = immersion_geometry(&l, false)?;
        let w: Vec<f64> = geom.nodes.iter().map(|g| g.sqrt_det * l.grid.weight()).collect();
        let resolved = l.grid.band_limit(&geom.maslov.residual, problem.max_mode.unwrap_or_else(|| default_max_mode(&l.grid)));
        let split = split_residual(&l, problem, &resolved, &w)?;
        if let Some(prev) = history.last() {
            if split.norm >= *prev {
                rising += 1;
            } else {
                rising = 0;
            }
        }
        history.push(split.norm);
        if split.norm < problem.tol.residual_tol {
            return Ok(RelativeSolution {
                immersion: l,
                potential,
                obstruction: split.along,
                obstruction_coefficients: split.coefficients,
                residual: split.norm,
                residual_sup: geom.maslov.residual_sup,
                history,
                iterations: iteration,
                condition,
                volume: geom.maslov.volume,
            });
        }
        if rising >= 5 || iteration == problem.tol.max_iter || !split.norm.is_finite() {
            return Err(Error::NewtonDiverged { history });
        }
        let (h, cond) = newton_step(&l, problem, &split, &w)?;
        condition = cond;
        let mut scale = 1.0;
        let next = loop {
            let step: Vec<f64> = h.iter().map(|v| v * scale).collect();
            match deform_by(&l, &step) {
                Ok(next) => break next,
                Err(Error::TubeTooSmall { .. }) if scale > 1e-3 => scale *= 0.5,
                Err(e) => return Err(e),
            }
        };
        for (p, v) in potential.iter_mut().zip(&h) {
            *p += scale * v;
        }
        l = next;
    }
    Err(Error::NewtonDiverged { history })
}

/// Killing potentials of the reference structure whose flows move the seed,
/// as an `L^2(M)`-orthonormal-coefficient complement of the stabilizer and constants.
pub fn transverse_generators(manifold: &ChartedManifold, seed: &TorusImmersion) -> Result<(Vec<Field>, Vec<String>)> {
    let reference = manifold.reference();
    let killing = killing_potentials(&reference)?;
    let dim = killing.len();
    let geom = immersion_geometry(&seed.with_manifold(reference.clone()), false)?;
    let w: Vec<f64> = geom.nodes.iter().map(|g| g.sqrt_det).collect();
    let total: f64 = w.iter().sum();
    let rows = seed.grid.len();
    let mut r = Mat::zeros(rows, dim);
    for (j, f) in killing.fields.iter().enumerate() {
        let vals = seed.restrict(f.as_ref());
        let mean = vals.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total;
        for k in 0..rows {
            r[(k, j)] = vals[k] - mean;
        }
    }
    let scale = killing
        .fields
        .iter()
        .map(|f| seed.restrict(f.as_ref()).iter().fold(0.0f64, |a, b| a.max(b.abs())))
        .fold(1.0f64, f64::max);
    // stabilizer: combinations constant on the seed
    let e = (r.transpose() * &r).symmetric_eigen();
    let null: Vec<DVector<f64>> = (0..dim)
        .filter(|&i| e.eigenvalues[i].max(0.0).sqrt() <= 1e-8 * scale * (rows as f64).sqrt())
        .map(|i| e.eigenvectors.column(i).into_owned())
        .collect();
    let gram = l2_gram(&reference, &killing.fields).unwrap_or_else(|_| Mat::identity(dim, dim));
    let complement: Vec<DVector<f64>> = if null.is_empty() {
        (0..dim).map(|i| DVector::from_fn(dim, |j, _| if i == j { 1.0 } else { 0.0 })).collect()
    } else {
        let z = Mat::from_fn(dim, null.len(), |i, a| null[a][i]);
        let c = z.transpose() * &gram;
        let vt = c.svd(false, true).v_t.unwrap();
        let proj = Mat::identity(dim, dim) - vt.transpose() * &vt;
        let e = proj.symmetric_eigen();
        let mut cols: Vec<DVector<f64>> =
            (0..dim).filter(|&i| e.eigenvalues[i] > 0.5).map(|i| e.eigenvectors.column(i).into_owned()).collect();
        for c in cols.iter_mut() {
            // deterministic sign: largest entry positive
            let imax = c.iamax();
            if c[imax] < 0.0 {
                *c = -c.clone();
            }
        }
        cols
    };
    let fields = complement
        .iter()
        .map(|c| Arc::new(Combination(c.iter().zip(&killing.fields).map(|(a, f)| (*a, f.clone())).collect())) as Field)
        .collect();
    let names = complement
        .iter()
        .map(|c| {
            c.iter()
                .zip(&killing.names)
                .filter(|(a, _)| a.abs() > 1e-12)
                .map(|(a, n)| format!("{a:+.4}*{n}"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    Ok((fields, names))
}

/// The relative problem on the orbit of a seed under the isometry group of
/// the reference structure. Moving the seed by `u^{-1}` with `J` fixed is
/// equivalent to keeping it and replacing `J` by `u . J`.
#[derive(Clone)]
pub struct OrbitProblem {
    pub relative: RelativeHslagProblem,
    pub generators: Vec<Field>,
    pub names: Vec<String>,
}

impl OrbitProblem {
    pub fn new(manifold: &ChartedManifold, seed: &TorusImmersion) -> Result<Self> {
        let relative = RelativeHslagProblem::new(manifold, seed)?;
        let (generators, names) = transverse_generators(manifold, seed)?;
        Ok(OrbitProblem { relative, generators, names })
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.relative.tol = tol;
        self
    }

    pub fn dim(&self) -> usize {
        self.generators.len()
    }

    /// Seed moved by the time-one flow of `sum a_i K_i`.
    pub fn seed_at(&self, a: &[f64]) -> Result<TorusImmersion> {
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(self.relative.seed.clone());
        }
        let field = Combination(a.iter().zip(&self.generators).map(|(c, f)| (*c, f.clone())).collect());
        let steps = 16usize.max((64.0 * norm).ceil() as usize);
        self.relative.seed.transported(&field, 1.0, steps)
    }
}

#[derive(Debug, Clone)]
pub struct OrbitEvaluation {
    pub params: Vec<f64>,
    pub value: f64,
    pub solution: RelativeSolution,
}

/// Volume of the relative solution started from the moved seed.
pub fn modified_volume(problem: &OrbitProblem, a: &[f64]) -> Result<OrbitEvaluation> {
    let start = problem.seed_at(a)?;
    let solution = solve_relative_from(&problem.relative, &start)?;
    Ok(OrbitEvaluation { params: a.to_vec(), value: solution.volume, solution })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizeOptions {
    pub gradient_step: f64,
    pub hessian_step: f64,
    /// Largest accepted parameter move per iteration.
    pub trust_radius: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions { gradient_step: 1e-4, hessian_step: 1e-3, trust_radius: 0.25 }
    }
}

#[derive(Debug, Clone)]
pub struct OrbitMinimum {
    pub params: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Mat,
    pub hessian_eigenvalues: Vec<f64>,
    pub nondegenerate: bool,
    pub iterations: usize,
    pub solution: RelativeSolution,
    /// Sup norm of `d* alpha_H` of the output.
    pub hslag_residual: f64,
    pub gradient_history: Vec<f64>,
}

fn fd_gradient(p: &OrbitProblem, a: &[f64], h: f64) -> Result<Vec<f64>> {
    (0..a.len())
        .map(|i| {
            let mut x = a.to_vec();
            x[i] = a[i] + h;
            let up = modified_volume(p, &x)?.value;
            x[i] = a[i] - h;
            let down = modified_volume(p, &x)?.value;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

fn fd_hessian(p: &OrbitProblem, a: &[f64], center: f64, h: f64) -> Result<Mat> {
    let k = a.len();
    let mut out = Mat::zeros(k, k);
    let at = |d: &[(usize, f64)]| -> Result<f64> {
        let mut x = a.to_vec();
        for (i, s) in d {
            x[*i] += s;
        }
        Ok(modified_volume(p, &x)?.value)
    };
    for i in 0..k {
        out[(i, i)] = (at(&[(i, h)])? - 2.0 * center + at(&[(i, -h)])?) / (h * h);
        for j in 0..i {
            let v = (at(&[(i, h), (j, h)])? - at(&[(i, h), (j, -h)])? - at(&[(i, -h), (j, h)])?
                + at(&[(i, -h), (j, -h)])?)
                / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Damped Newton on the modified volume with finite-difference derivatives.
/// A degenerate Hessian at the end is reported through `nondegenerate`.
pub fn minimize_over_orbit(problem: &OrbitProblem, start: &[f64], opts: &MinimizeOptions) -> Result<OrbitMinimum> {
    let tol = problem.relative.tol;
    let mut a = start.to_vec();
    if a.len() != problem.dim() {
        return Err(Error::ConfigInvalid(format!("expected {} orbit parameters, got {}", problem.dim(), a.len())));
    }
    let mut current = modified_volume(problem, &a)?;
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let grad = fd_gradient(problem, &a, opts.gradient_step)?;
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        history.push(gnorm);
        let hess = fd_hessian(problem, &a, current.value, opts.hessian_step)?;
        let eig = hess.clone().symmetric_eigen();
        let mut eigs: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        eigs.sort_by(|x, y| x.total_cmp(y));
        if gnorm < tol.grad_tol || a.is_empty() {
            let min_eig = eigs.first().copied().unwrap_or(f64::INFINITY);
            return Ok(OrbitMinimum {
                params: a,
                value: current.value,
                gradient: grad,
                hessian: hess,
                hessian_eigenvalues: eigs,
                nondegenerate: min_eig > tol.degeneracy_tol,
                iterations,
                hslag_residual: current.solution.residual_sup,
                solution: current.solution,
                gradient_history: history,
            });
        }
        if iterations >= tol.max_iter {
            return Err(Error::DescentStalled { gradient: gnorm });
        }
        iterations += 1;
        let g = DVector::from_column_slice(&grad);
        let mut dir = if eigs[0] > tol.degeneracy_tol {
            -hess.clone().lu().solve(&g).unwrap_or_else(|| -g.clone())
        } else {
            -g.clone() / eigs.iter().fold(1.0f64, |m, v| m.max(v.abs()))
        };
        let len = dir.norm();
        if len > opts.trust_radius {
            dir *= opts.trust_radius / len;
        }
        let slope = g.dot(&dir);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = a.iter().zip(dir.iter()).map(|(x, d)| x + t * d).collect();
            if let Ok(ev) = modified_volume(problem, &trial) {
                if ev.value <= current.value + 1e-4 * t * slope {
                    accepted = Some(ev);
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some(ev) => {
                a = ev.params.clone();
                current = ev;
            }
            None => return Err(Error::DescentStalled { gradient: gnorm }),
        }
    }
}

/// Signed geodesic curvature of a curve and its relative spread.
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureSpread {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// `(max - min) / max(|mean|, 2 pi / length)`.
    pub relative: f64,
}

pub fn geodesic_curvature(l: &TorusImmersion) -> Result<Vec<f64>> {
    if l.n != 1 {
        return Err(Error::UnsupportedBackend { backend: "geodesic curvature needs a curve".into() });
    }
    let geom = immersion_geometry(l, false)?;
    Ok(geom
        .nodes
        .iter()
        .map(|g| {
            let e = g.tangent.column(0).into_owned();
            let len = g.sqrt_det;
            let nu = &g.ambient.acs * &e / len;
            (g.mean_curvature.transpose() * &g.ambient.metric * nu)[0]
        })
        .collect())
}

pub fn curvature_spread(l: &TorusImmersion) -> Result<CurvatureSpread> {
    let k = geodesic_curvature(l)?;
    let length = crate::lagrangian::volume(l)?;
    let min = k.iter().copied().fold(f64::INFINITY, f64::min);
    let max = k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    let scale = mean.abs().max(2.0 * std::f64::consts::PI / length);
    Ok(CurvatureSpread { min, max, mean, relative: (max - min) / scale })
}

#[derive(Debug, Clone)]
pub struct ContinuationStep {
    pub t: f64,
    pub params: Vec<f64>,
    pub volume: f64,
    pub immersion: TorusImmersion,
    pub residual_sup: f64,
    pub min_hessian_eigenvalue: Option<f64>,
    pub curvature_spread: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ContinuationReport {
    pub steps: Vec<ContinuationStep>,
    /// Where and why the sweep ended early.
    pub stopped: Option<(f64, String)>,
}

impl ContinuationReport {
    /// Smallest and largest parameter reached.
    pub fn interval(&self) -> (f64, f64) {
        self.steps.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.t), b.max(s.t)))
    }
}

/// Follows a family of reference-stationary seeds through `t_grid` (in the
/// given order), minimizing over the orbit at every step from the previous
/// minimizer. The first step must succeed with a non-degenerate minimum.
pub fn continuation(
    manifold: &ChartedManifold,
    family: &dyn Fn(f64) -> Result<TorusImmersion>,
    t_grid: &[f64],
    tol: Tolerances,
    opts: &MinimizeOptions,
) -> Result<ContinuationReport> {
    let mut steps: Vec<ContinuationStep> = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    let mut last_t: Option<f64> = None;
    for &t in t_grid {
        let outcome = (|| -> Result<ContinuationStep> {
            let seed = family(t)?;
            let problem = OrbitProblem::new(manifold, &seed)?.with_tolerances(tol);
            if manifold.perturbation.is_none() {
                let sol = solve_relative_hslag(&problem.relative)?;
                let spread = if seed.n == 1 { Some(curvature_spread(&sol.immersion)?.relative) } else { None };
                return Ok(ContinuationStep {
                    t,
                    params: vec![0.0; problem.dim()],
                    volume: sol.volume,
                    residual_sup: sol.residual_sup,
                    immersion: sol.immersion,
                    min_hessian_eigenvalue: None,
                    curvature_spread: spread,
                });
            }
            let start = warm.clone().unwrap_or_else(|| vec![0.0; problem.dim()]);
            let min = minimize_over_orbit(&problem, &start, opts)?;
            let min_eig = min.hessian_eigenvalues.first().copied();
            if !min.nondegenerate {
                return Err(Error::DegenerateMinimum { min_eig: min_eig.unwrap_or(0.0) });
            }
            if min.hslag_residual > tol.hslag_tol {
                return Err(Error::ContinuationStopped {
                    t,
                    reason: format!("orbit critical point is not stationary: residual {:.2e}", min.hslag_residual),
                });
            }
            if let (Some(prev), Some(lt)) = (&warm, last_t) {
                let jump = prev.iter().zip(&min.params).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if jump > 10.0 * (t - lt).abs() + 1e-6 {
                    return Err(Error::ContinuationStopped { t, reason: format!("orbit parameter jumped by {jump:e}") });
                }
            }
            let spread = if seed.n == 1 { Some(curvature_spread(&min.solution.immersion)?.relative) } else { None };
            Ok(ContinuationStep {
                t,
                params: min.params,
                volume: min.value,
                residual_sup: min.hslag_residual,
                immersion: min.solution.immersion,
                min_hessian_eigenvalue: min_eig,
                curvature_spread: spread,
            })
        })();
        match outcome {
            Ok(step) => {
                warm = Some(step.params.clone());
                last_t = Some(t);
                steps.push(step);
            }
            Err(e) => {
                let reason = match &e {
                    Error::ContinuationStopped { reason, .. } => reason.clone(),
                    other => other.to_string(),
                };
                if steps.is_empty() {
                    return Err(Error::ContinuationStopped { t, reason });
                }
                return Ok(ContinuationReport { steps, stopped: Some((t, reason)) });
            }
        }
    }
    Ok(ContinuationReport { steps, stopped: None })
}
