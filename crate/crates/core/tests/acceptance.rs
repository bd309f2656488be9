//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use hslag::deform::*;
use hslag::fields::ScalarField;
use hslag::jacobi::*;
use hslag::kahler::laplacian as ambient_laplacian;
use hslag::kahler::*;
use hslag::lagrangian::{deform_by, first_variation_of, mean_curvature, second_variation_fd, volume, TorusImmersion};
use hslag::toric::*;
use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cp1() -> ChartedManifold {
    ChartedManifold::projective(1, CpChart::ActionAngle)
}

fn flat_torus_oracle() -> Outcome {
    let start = Instant::now();
    // p = theta over a fixed q: a product of closed geodesics of C/Z^2
    let l = fiber_in_action_angle(ChartedManifold::flat(2), &[1.0, 2.0], 16);
    let residual = mean_curvature(&l).map_err(|e| e.to_string())?.residual_sup;
    let op = assemble_box(&l, None).map_err(|e| e.to_string())?;
    let diag: Vec<f64> = op
        .basis
        .elements
        .iter()
        .map(|(xi, _)| (xi.iter().map(|k| (k * k) as f64).sum::<f64>()).powi(2))
        .collect();
    let oracle = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag.clone()));
    let entry_err = (&op.matrix - &oracle).amax();
    let spectral = spectrum(&op, None).map_err(|e| e.to_string())?;
    let mut expected = diag;
    expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let eig_err = spectral.eigenvalues.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    check(
        residual < 1e-10 && entry_err < 1e-8 && eig_err < 1e-8 && spectral.kernel_dimension == 1 && secs < 5.0,
        format!("residual {residual:.1e}, |A - diag| {entry_err:.1e}, eigenvalue error {eig_err:.1e}, kernel {}, {secs:.1}s", spectral.kernel_dimension),
    )
}

fn clifford_tori() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for (n, grid, kernel) in [(1usize, 32usize, 3usize), (2, 16, 7)] {
        let p = LabelledPolytope::simplex(n);
        let l = moment_fiber(&p, &p.barycenter().unwrap(), grid).map_err(|e| e.to_string())?;
        let residual = mean_curvature(&l).map_err(|e| e.to_string())?.residual_sup;
        let op = assemble_box(&l, None).map_err(|e| e.to_string())?;
        let spectral = spectrum(&op, None).map_err(|e| e.to_string())?;
        let rig = rigidity_check(&l, &op, &spectral).map_err(|e| e.to_string())?;
        let stab = stability_check(&spectral);
        ok &= residual < 1e-8 && spectral.kernel_dimension == kernel && rig.rigid && stab.stable;
        parts.push(format!(
            "CP{n}: residual {residual:.1e}, kernel {}, rigid {}, stable {}",
            spectral.kernel_dimension, rig.rigid, stab.stable
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    check(ok && secs < 60.0, format!("{}; {secs:.1}s", parts.join("; ")))
}

/// Fubini-Study pulled back through `z_i = sqrt(x_i / x_0) e^{i theta_i}`.
fn fs_in_action_angle(n: usize, p: &[f64]) -> Mat {
    let affine = ChartedManifold::projective(n, CpChart::Affine);
    let to_z = |q: &[f64]| -> Vec<f64> {
        let x0 = 1.0 - q[..n].iter().sum::<f64>();
        let r: Vec<f64> = (0..n).map(|i| (q[i] / x0).sqrt()).collect();
        let mut out: Vec<f64> = (0..n).map(|i| r[i] * q[n + i].cos()).collect();
        out.extend((0..n).map(|i| r[i] * q[n + i].sin()));
        out
    };
    let h = 1e-6;
    let d = 2 * n;
    let jac = Mat::from_fn(d, d, |i, j| {
        let mut a = p.to_vec();
        let mut b = p.to_vec();
        a[j] += h;
        b[j] -= h;
        (to_z(&a)[i] - to_z(&b)[i]) / (2.0 * h)
    });
    jac.transpose() * affine.metric(&to_z(p)).unwrap() * jac
}

fn guillemin_matches_fubini_study() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for n in 1..=2 {
        let toric = ChartedManifold::new(Backend::Toric(LabelledPolytope::simplex(n)));
        let mut count = 0;
        while count < 100 {
            let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..0.96)).collect();
            if 1.0 - p.iter().sum::<f64>() < 0.02 {
                continue;
            }
            p.extend((0..n).map(|_| rng.gen_range(-PI..PI)));
            let g = toric.metric(&p).map_err(|e| e.to_string())?;
            let fs = fs_in_action_angle(n, &p);
            worst = worst.max((&g - &fs).amax() / fs.amax());
            count += 1;
        }
    }
    check(worst < 1e-6, format!("max relative error {worst:.1e} over 200 points"))
}

fn selfadjointness() -> Outcome {
    let mut worst_full = 0.0f64;
    let hslag_cases = [
        fiber_in_action_angle(ChartedManifold::flat(2), &[1.0, 2.0], 12),
        fiber_in_action_angle(cp1(), &[0.5], 32),
        fiber_in_action_angle(ChartedManifold::sphere(), &[0.5], 32),
        moment_fiber(&LabelledPolytope::simplex(2), &[0.2, 0.45], 16).unwrap(),
    ];
    for l in &hslag_cases {
        let op = assemble_box(l, None).map_err(|e| e.to_string())?;
        worst_full = worst_full.max(op.asymmetry());
    }
    // z = 0.5 + eps sin 2 theta on the round sphere is not stationary
    let mut ratios = Vec::new();
    let mut worst_d = 0.0f64;
    for eps in [0.02, 0.05, 0.1] {
        let winding = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let l = TorusImmersion::from_fn(ChartedManifold::sphere(), 1, 32, winding, move |t| vec![0.5 + eps * (2.0 * t[0]).sin(), 0.0]);
        let op = assemble_box(&l, None).map_err(|e| e.to_string())?;
        let r = selfadjoint_diagnostics(&l, &op, 4).map_err(|e| e.to_string())?;
        worst_d = worst_d.max(r.d_part_asymmetry);
        ratios.push(r.full_asymmetry / r.divergence_rms);
    }
    let spread = ratios.iter().cloned().fold(0.0, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    check(
        worst_full < 1e-6 && worst_d < 1e-6 && spread < 10.0,
        format!("stationary asymmetry {worst_full:.1e}, D-part {worst_d:.1e}, asymmetry/|div JH| ratios {:.2e} {:.2e} {:.2e}", ratios[0], ratios[1], ratios[2]),
    )
}

/// Random combination of every nonconstant Fourier mode with `|k_i| <= 2`.
fn random_wave(l: &TorusImmersion, rng: &mut ChaCha8Rng, size: f64) -> Vec<f64> {
    let mut modes: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..l.n {
        modes = modes.iter().flat_map(|m| (-2..=2).map(move |k| [m.clone(), vec![k as f64]].concat())).collect();
    }
    // one representative of each +-k pair
    modes.retain(|k| k.iter().find(|v| **v != 0.0).is_some_and(|v| *v > 0.0));
    let terms: Vec<(Vec<f64>, f64, f64)> = modes.into_iter().map(|k| (k, rng.gen_range(-size..size), rng.gen_range(-size..size))).collect();
    l.grid
        .nodes()
        .iter()
        .map(|t| {
            terms
                .iter()
                .map(|(k, a, b)| {
                    let phase = k.iter().zip(t).map(|(x, y)| x * y).sum::<f64>();
                    a * phase.cos() + b * phase.sin()
                })
                .sum()
        })
        .collect()
}

fn variation_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let equator = fiber_in_action_angle(cp1(), &[0.5], 32);
    let clifford = moment_fiber(&LabelledPolytope::simplex(2), &[1.0 / 3.0, 1.0 / 3.0], 12).unwrap();
    let latitude = fiber_in_action_angle(ChartedManifold::sphere(), &[0.5], 32);
    // first variation needs non-stationary immersions
    let bent = |l: &TorusImmersion, rng: &mut ChaCha8Rng| deform_by(l, &random_wave(l, rng, 0.001)).unwrap();
    let first_cases = [bent(&equator, &mut rng), bent(&latitude, &mut rng), bent(&clifford, &mut rng)];
    let mut worst_first = 0.0f64;
    for l in &first_cases {
        for _ in 0..10 {
            let f = random_wave(l, &mut rng, 1.0);
            let r = first_variation_of(l, &f, 1e-4).map_err(|e| e.to_string())?;
            worst_first = worst_first.max(r.relative_error);
        }
    }
    let mut worst_second = 0.0f64;
    for (l, m) in [(&equator, 6), (&latitude, 6), (&clifford, 2)] {
        let op = assemble_box(l, Some(m)).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let c: Vec<f64> = (0..op.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = op.synthesize(&c);
            let scale = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let c: Vec<f64> = c.iter().map(|v| v / scale).collect();
            let u: Vec<f64> = u.iter().map(|v| v / scale).collect();
            let q = op.quadratic_form(&c);
            let fd = second_variation_fd(l, &u, 1e-3).map_err(|e| e.to_string())?;
            worst_second = worst_second.max((fd - q).abs() / q.abs());
        }
    }
    check(
        worst_first < 1e-3 && worst_second < 1e-3,
        format!("first variation max rel {worst_first:.1e}, second variation max rel {worst_second:.1e} (3 immersions x 10 directions)"),
    )
}

fn reduction_bookkeeping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let hopf = DMatrix::from_row_slice(2, 1, &[1i64, 1]);
    // level |z|^2 = 2 reduces to CP^1 with total area 2 pi
    let radius = 2f64.sqrt();
    let samples: Vec<Vec<Complex<f64>>> = (0..200)
        .map(|_| {
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = v.iter().map(|a| a * a).sum::<f64>().sqrt() / radius;
            vec![Complex::new(v[0] / r, v[1] / r), Complex::new(v[2] / r, v[3] / r)]
        })
        .collect();
    let red = reduction_volume_factor(&hopf, &samples).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for x in [0.5, 0.3, 0.8] {
        let l = fiber_in_action_angle(cp1(), &[x], 32);
        let base = volume(&l).map_err(|e| e.to_string())?;
        // preimage is the flat torus |z_0|^2 = 2 (1 - x), |z_1|^2 = 2 x
        let lifted = (2.0 * PI) * (2.0 * (1.0 - x)).sqrt() * (2.0 * PI) * (2.0 * x).sqrt();
        worst = worst.max((lifted - red.kappa * base).abs() / lifted);
    }
    check(
        red.relative_spread < 1e-9 && worst < 1e-6,
        format!("orbit length {:.10} spread {:.1e}, kappa consistency {worst:.1e}", red.kappa, red.relative_spread),
    )
}

/// Small symmetry-breaking term on top of the positive path.
fn generic_term() -> AntiInvariantField {
    AntiInvariantField::new("generic", |p: &[f64]| {
        let w = (2.0 * PI * p[0] + p[1] + 0.3).cos() * 1e-3;
        Mat::from_row_slice(2, 2, &[w, 0.5 * w, 0.5 * w, 0.0])
    })
}

fn equator_path() -> Result<(Arc<dyn ScalarField>, PerturbationPath), String> {
    let eq = fiber_in_action_angle(cp1(), &[0.5], 32);
    let phi: Arc<dyn ScalarField> = Arc::new(bump_quartic_potential(&eq).map_err(|e| e.to_string())?);
    let path = integrate_positive_path(&cp1(), phi.clone(), &PathOptions::new((0.35, 0.65), 0.1, 20)).map_err(|e| e.to_string())?;
    Ok((phi, path))
}

fn deformation_pipeline() -> Outcome {
    let (_, path) = equator_path()?;
    let js = path.structure_at(0.05).map_err(|e| e.to_string())?.unwrap();
    let m = cp1().with_perturbation(Arc::new(Composite(vec![js, Arc::new(generic_term())])));
    let eq = fiber_in_action_angle(cp1(), &[0.5], 32);
    let op = OrbitProblem::new(&m, &eq).map_err(|e| e.to_string())?;
    let min = minimize_over_orbit(&op, &[0.0, 0.0], &MinimizeOptions::default()).map_err(|e| e.to_string())?;
    let spread = curvature_spread(&min.solution.immersion).map_err(|e| e.to_string())?.relative;
    let family = |t: f64| Ok(fiber_in_action_angle(cp1(), &[0.5 + t], 32));
    let rep = continuation(&m, &family, &[0.0, 0.01, 0.02, 0.03], Tolerances::default(), &MinimizeOptions::default())
        .map_err(|e| e.to_string())?;
    let (lo, hi) = rep.interval();
    let fiber_spread = rep.steps.iter().map(|s| s.curvature_spread.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    check(
        min.nondegenerate && spread < 1e-5 && hi > lo && fiber_spread < 1e-5,
        format!(
            "minimum eigenvalues {:.3?}, spread {spread:.1e}; fibration over t in [{lo}, {hi}] ({} fibers, max spread {fiber_spread:.1e}){}",
            min.hessian_eigenvalues,
            rep.steps.len(),
            rep.stopped.as_ref().map(|(t, why)| format!(", stopped at {t}: {why}")).unwrap_or_default()
        ),
    )
}

fn positivity() -> Outcome {
    let (_, path) = equator_path()?;
    let eq = fiber_in_action_angle(cp1(), &[0.5], 32);
    let (gens, _) = transverse_generators(&cp1(), &eq).map_err(|e| e.to_string())?;
    let rep = positivity_experiment(&eq, &path, &[0.0, 0.02, 0.05, 0.1], &gens, 1e-2).map_err(|e| e.to_string())?;
    let at_zero = rep.at(0.0).map(|r| r.second_derivative.abs()).fold(0.0, f64::max);
    let positive: Vec<f64> = rep.rows.iter().filter(|r| r.s > 0.0).map(|r| r.second_derivative).collect();
    let min_pos = positive.iter().cloned().fold(f64::INFINITY, f64::min);
    check(
        at_zero < 1e-7 && min_pos > 0.0 && positive.len() == 3 * gens.len(),
        format!("|d2| at s = 0: {at_zero:.1e}; smallest for s > 0: {min_pos:.3e} over {} subgroups", gens.len()),
    )
}

fn quartic_expansion() -> Outcome {
    let mut flat_err = 0.0f64;
    for (m, seed) in [
        (ChartedManifold::flat(1), fiber_in_action_angle(ChartedManifold::flat(1), &[1.0], 32)),
        (ChartedManifold::flat(2), fiber_in_action_angle(ChartedManifold::flat(2), &[1.0, 2.0], 12)),
    ] {
        let bump = bump_with_radius(&seed, 0.8).map_err(|e| e.to_string())?;
        let k = seed.n as f64;
        for r in [0.05, 0.1, 0.15] {
            let mut q = seed.values[3].clone();
            q[0] += r;
            let lap = ambient_laplacian(&m, &bump, &q).map_err(|e| e.to_string())?;
            let raw = -lap / bump.coefficient();
            flat_err = flat_err.max((raw + 4.0 * r * r * (k + 2.0)).abs() / (4.0 * r * r * (k + 2.0)));
        }
    }
    let eq = fiber_in_action_angle(ChartedManifold::sphere(), &[0.0], 64);
    let bump = bump_with_radius(&eq, 0.4).map_err(|e| e.to_string())?;
    let mut errs = Vec::new();
    for r in [0.1, 0.05, 0.025] {
        let lap = ambient_laplacian(&ChartedManifold::sphere(), &bump, &[r, 0.0]).map_err(|e| e.to_string())?;
        errs.push((lap / (r * r) - 1.0).abs());
    }
    let order_one = errs.iter().zip([0.1, 0.05, 0.025]).all(|(e, r)| *e < 2.0 * r);
    check(
        flat_err < 1e-5 && errs[2] < errs[1] && errs[1] < errs[0] && order_one,
        format!("flat fibers rel error {flat_err:.1e}; sphere |ratio - 1| at r = 0.1, 0.05, 0.025: {:.2e} {:.2e} {:.2e}", errs[0], errs[1], errs[2]),
    )
}

fn jump() -> Outcome {
    let sphere = ChartedManifold::sphere();
    let m = sphere.clone().with_perturbation(Arc::new(SurfaceStructure(Surface::tilted([0.985, 1.0, 1.015], [0.0, 1.0, 0.0], 0.4))));
    let pts: Vec<Vec<f64>> = (0..400)
        .map(|k| vec![-0.95 + 1.9 * ((k * 37 % 400) as f64 + 0.5) / 400.0, k as f64 * 0.7])
        .collect();
    let size = perturbation_size(&m, &pts).map_err(|e| e.to_string())?;
    let eq = fiber_in_action_angle(sphere, &[0.0], 32);
    let op = OrbitProblem::new(&m, &eq).map_err(|e| e.to_string())?;
    let min = minimize_over_orbit(&op, &[0.0, 0.0], &MinimizeOptions::default()).map_err(|e| e.to_string())?;
    let norm = min.params.iter().map(|v| v * v).sum::<f64>().sqrt();
    check(
        norm > 0.1 && size < 0.05 && min.nondegenerate,
        format!("perturbation size {size:.3}, minimizer at parameter distance {norm:.3}, eigenvalues {:.3?}", min.hessian_eigenvalues),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("flat torus oracle", flat_torus_oracle),
        ("Clifford tori", clifford_tori),
        ("Guillemin and Fubini-Study agree", guillemin_matches_fubini_study),
        ("selfadjointness diagnostics", selfadjointness),
        ("variation identities", variation_identities),
        ("reduction bookkeeping", reduction_bookkeeping),
        ("deformation pipeline", deformation_pipeline),
        ("positivity experiment", positivity),
        ("quartic potential expansion", quartic_expansion),
        ("jump phenomenon", jump),
    ];
    let start = Instant::now();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[{:>2}] PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("[{:>2}] FAIL {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of 10 passed in {:.1}s", 10 - failures, start.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
