//! Task dispatch, run reports and CSV emission.

use crate::config::{ExperimentConfig, Task};
use crate::deform::{
    continuation, curvature_spread, minimize_over_orbit, positivity_experiment, transverse_generators, OrbitProblem,
};
use crate::error::{Error, Result};
use crate::jacobi::{assemble_box, box_fd, default_max_mode, rigidity_check, spectrum, stability_check, BoxOperator};
use crate::kahler::{sphere_point, Backend, ChartedManifold};
use crate::lagrangian::{mean_curvature, TorusImmersion};
use crate::toric::validate_delzant;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Step of the finite-difference stability operator on non-integrable structures.
const BOX_FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Default, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).map_err(|e| Error::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| format!("{v:e}"))).map_err(|e| Error::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Pass,
    Fail,
    Error,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Pass => 0,
            RunStatus::Fail => 2,
            RunStatus::Error => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub code: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        ErrorRecord { code: e.code().to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub task: Option<Task>,
    pub tool_version: String,
    /// SHA-256 of the config text.
    pub config_hash: String,
    pub status: RunStatus,
    pub verdicts: BTreeMap<String, bool>,
    pub scalars: BTreeMap<String, f64>,
    pub tables: BTreeMap<String, Table>,
    pub error: Option<ErrorRecord>,
    pub elapsed_seconds: f64,
    /// SHA-256 of everything above except the timing.
    pub output_hash: String,
}

impl RunReport {
    fn new(task: Option<Task>, config_text: &str) -> Self {
        RunReport {
            task,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hex(&Sha256::digest(config_text.as_bytes())),
            status: RunStatus::Error,
            verdicts: BTreeMap::new(),
            scalars: BTreeMap::new(),
            tables: BTreeMap::new(),
            error: None,
            elapsed_seconds: 0.0,
            output_hash: String::new(),
        }
    }

    fn verdict(&mut self, name: &str, ok: bool) {
        self.verdicts.insert(name.to_string(), ok);
    }

    fn scalar(&mut self, name: &str, v: f64) {
        self.scalars.insert(name.to_string(), v);
    }

    fn seal(&mut self) {
        let mut copy = self.clone();
        copy.elapsed_seconds = 0.0;
        copy.output_hash.clear();
        let text = serde_json::to_string(&copy).unwrap_or_default();
        self.output_hash = hex(&Sha256::digest(text.as_bytes()));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Caps rayon's worker count from `HSLAG_THREADS`, when set.
pub fn configure_threads() {
    if let Some(n) = std::env::var("HSLAG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Runs the config at `path`, writes the report and tables into `out_dir`.
/// Errors of the task itself end up in the report; only failures to write
/// the outputs are returned as `Err`.
pub fn run(path: &Path, out_dir: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())));
    let (report, cfg) = match text {
        Ok(text) => match ExperimentConfig::load(path) {
            Ok((cfg, _)) => (execute(&cfg, &text), Some(cfg)),
            Err(e) => (failed(None, &text, &e), None),
        },
        Err(e) => (failed(None, "", &e), None),
    };
    let default_out = crate::config::OutputBlock::default();
    let output = cfg.as_ref().map(|c| &c.output).unwrap_or(&default_out);
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(&output.report), report.to_json())?;
    if output.csv {
        emit_plot_data(&report, out_dir)?;
    }
    Ok(report)
}

fn failed(task: Option<Task>, text: &str, e: &Error) -> RunReport {
    let mut r = RunReport::new(task, text);
    r.error = Some(e.into());
    r.status = RunStatus::Error;
    r.seal();
    r
}

/// Runs a parsed config; never panics on module errors.
pub fn execute(cfg: &ExperimentConfig, config_text: &str) -> RunReport {
    let start = Instant::now();
    let mut report = RunReport::new(Some(cfg.task), config_text);
    let outcome = match cfg.task {
        Task::Validate => task_validate(cfg, &mut report),
        Task::HslagCheck => task_hslag_check(cfg, &mut report),
        Task::Spectrum => task_spectrum(cfg, &mut report),
        Task::Rigidity => task_rigidity(cfg, &mut report),
        Task::Deform => task_deform(cfg, &mut report),
        Task::Fibrate => task_fibrate(cfg, &mut report),
        Task::PerturbPath => task_perturb_path(cfg, &mut report),
        Task::Positivity => task_positivity(cfg, &mut report),
    };
    report.status = match &outcome {
        Err(e) => {
            report.error = Some(e.into());
            RunStatus::Error
        }
        Ok(()) if report.verdicts.values().all(|&v| v) => RunStatus::Pass,
        Ok(()) => RunStatus::Fail,
    };
    report.seal();
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    report
}

/// Writes one CSV per table; returns the paths written.
pub fn emit_plot_data(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for (name, table) in &report.tables {
        let path = out_dir.join(format!("{name}.csv"));
        std::fs::write(&path, table.to_csv()?)?;
        out.push(path);
    }
    Ok(out)
}

/// Grid angles, chart coordinates, and points of the unit sphere on surface backends.
pub fn curve_table(l: &TorusImmersion) -> Table {
    let n = l.n;
    let dim = l.manifold.real_dimension();
    let surface = matches!(l.manifold.backend, Backend::SurfaceOfRevolution(_));
    let mut cols: Vec<String> = (0..n).map(|i| format!("theta{i}")).collect();
    cols.extend((0..dim).map(|i| format!("p{i}")));
    if surface {
        cols.extend(["x", "y", "z"].map(String::from));
    }
    let mut t = Table { columns: cols, rows: Vec::new() };
    for (k, theta) in l.grid.nodes().into_iter().enumerate() {
        let p = &l.values[k];
        let mut row = theta;
        row.extend(p.iter().copied());
        if surface {
            row.extend(sphere_point(p));
        }
        t.rows.push(row);
    }
    t
}

fn seed(cfg: &ExperimentConfig, m: &ChartedManifold) -> Result<TorusImmersion> {
    cfg.immersion_at(m, 0.0)
}

fn stability_operator(cfg: &ExperimentConfig, l: &TorusImmersion) -> Result<BoxOperator> {
    if l.manifold.is_integrable() {
        assemble_box(l, cfg.discretization.max_mode)
    } else {
        box_fd(l, BOX_FD_STEP, cfg.discretization.max_mode.unwrap_or_else(|| default_max_mode(&l.grid)))
    }
}

fn task_validate(cfg: &ExperimentConfig, r: &mut RunReport) -> Result<()> {
    let m = cfg.manifold()?;
    if let Backend::Toric(p) = &m.backend {
        let rep = validate_delzant(p)?;
        r.verdict("delzant", rep.valid);
        let mut t = Table::new(&(0..p.dim).map(|i| ["x0", "x1", "x2", "x3"][i.min(3)]).collect::<Vec<_>>());
        for v in &rep.vertices {
            t.push(v.point.clone());
        }
        r.tables.insert("vertices".into(), t);
    }
    r.scalar("charts", m.chart_atlas().len() as f64);
    let l = seed(cfg, &m)?;
    let md = mean_curvature(&l)?;
    r.scalar("lagrangian_defect", md.lagrangian_defect);
    r.scalar("volume", md.volume);
    r.verdict("lagrangian", md.lagrangian_defect < cfg.tolerance.lagrangian_tol);
    if cfg.output.curves {
        r.tables.insert("curve".into(), curve_table(&l));
    }
    Ok(())
}

fn task_hslag_check(cfg: &ExperimentConfig, r: &mut RunReport) -> Result<()> {
    let m = cfg.manifold()?;
    let l = seed(cfg, &m)?;
    let md = mean_curvature(&l)?;
    r.scalar("residual_sup", md.residual_sup);
    r.scalar("residual_l2", md.residual_l2);
    r.scalar("residual_integral", md.residual_integral);
    r.scalar("volume", md.volume);
    r.scalar("lagrangian_defect", md.lagrangian_defect);
    r.verdict("lagrangian", md.lagrangian_defect < cfg.tolerance.lagrangian_tol);
    r.verdict("hslag", md.residual_sup < cfg.tolerance.hslag_tol);
    let mut t = Table::new(&["node", "residual"]);
    for (k, v) in md.residual.iter().enumerate() {
        t.push(vec![k as f64, *v]);
    }
    r.tables.insert("residual".into(), t);
    if cfg.output.curves {
        r.tables.insert("curve".into(), curve_table(&l));
    }
    Ok(())
}

fn spectrum_table(eigs: &[f64], kernel: usize) -> Table {
    let mut t = Table::new(&["index", "eigenvalue", "kernel"]);
    for (i, e) in eigs.iter().enumerate() {
        t.push(vec![i as f64, *e, if i < kernel { 1.0 } else { 0.0 }]);
    }
    t
}

fn task_spectrum(cfg: &ExperimentConfig, r: &mut RunReport) -> Result<()> {
    let m = cfg.manifold()?;
    let l = seed(cfg, &m)?;
    let op = stability_operator(cfg, &l)?;
    let spectral = spectrum(&op, cfg.discretization.kernel_tol)?;
    r.scalar("kernel_dimension", spectral.kernel_dimension as f64);
    r.scalar("min_nonkernel_eigenvalue", spectral.min_nonkernel_eigenvalue);
    r.scalar("asymmetry", spectral.asymmetry);
    r.scalar("basis_size", op.len() as f64);
    r.verdict("stable", stability_check(&spectral).stable);
    r.tables.insert("spectrum".into(), spectrum_table(&spectral.eigenvalues, spectral.kernel_dimension));
    Ok(())
}

fn task_rigidity(cfg: &ExperimentConfig, r: &mut RunReport) -> Result<()> {
    let m = cfg.manifold()?;
    let l = seed(cfg, &m)?;
    let op = stability_operator(cfg, &l)?;
    let spectral = spectrum(&op, cfg.discretization.kernel_tol)?;
    let rig = rigidity_check(&l, &op, &spectral)?;
    let stab = stability_check(&spectral);
    r.scalar("kernel_dimension", spectral.kernel_dimension as f64);
    r.scalar("restriction_rank", rig.rank as f64);
    r.scalar("killing_dimension", rig.killing.len() as f64);
    r.scalar("stability_margin", stab.margin);
    r.verdict("rigid", rig.rigid);
    r.verdict("stable", stab.stable);
    let mut t = Table::new(&["index", "singular_value"]);
    for (i, s) in rig.singular_values.iter().enumerate() {
        t.push(vec![i as f64, *s]);
    }
    r.tables.insert("restriction_singular_values".into(), t);
    r.tables.insert("spectrum".into(), spectrum_table(&spectral.eigenvalues, spectral.kernel_dimension));
    Ok(())
}

fn orbit_problem(cfg: &ExperimentConfig, m: &ChartedManifold, l: &TorusImmersion) -> Result<OrbitProblem> {
    let mut p = OrbitProblem::new(m, l)?.with_tolerances(cfg.tolerance);
    p.relative.max_mode = cfg.discretization.max_mode;
    Ok(p)
}

fn task_deform(cfg: &ExperimentConfig, r: &mut RunReport) -> Result<()> {
    let m = cfg.manifold()?;
    let l = seed(cfg, &m.reference())?;
    let p = orbit_problem(cfg, &m, &l)?;
    let start = cfg.experiment.start.clone().unwrap_or_else(|| vec![0.0; p.dim()]);
    if start.len() != p.dim() {
        return Err(Error::ConfigInvalid(format!("`experiment.start` needs {} entries", p.dim())));
    }
    let min = minimize_over_orbit(&p, &start, &cfg.experiment.minimize)?;
    let norm = min.params.iter().map(|v| v * v).sum::<f64>().sqrt();
    r.scalar("parameter_norm", norm);
    r.scalar("modified_volume", min.value);
    r.scalar("hslag_residual", min.hslag_residual);
    r.scalar("iterations", min.iterations as f64);
    r.scalar("min_hessian_eigenvalue", min.hessian_eigenvalues.first().copied().unwrap_or(f64::NAN));
    r.verdict("nondegenerate", min.nondegenerate);
    r.verdict("hslag", min.hslag_residual < cfg.tolerance.hslag_tol);
    if l.n == 1 {
        let spread = curvature_spread(&min.solution.immersion)?;
        r.scalar("curvature_spread", spread.relative);
    }
    let mut t = Table::new(&["index", "parameter", "gradient"]);
    for (i, (a, g)) in min.params.iter().zip(&min.gradient).enumerate() {
        t.push(vec![i as f64, *a, *g]);
    }
    r.tables.insert("parameters".into(), t);
    let mut t = Table::new(&["index", "eigenvalue"]);
    for (i, e) in min.hessian_eigenvalues.iter().enumerate() {
        t.push(vec![i as f64, *e]);
    }
    r.tables.insert("hessian".into(), t);
    let mut t = Table::new(&["iteration", "residual"]);
    for (i, e) in min.solution.history.iter().enumerate() {
        t.push(vec![i as f64, *e]);
    }
    r.tables.insert("newton".into(), t);
    let mut t = Table::new(&["iteration", "gradient_norm"]);
    for (i, e) in min.gradient_history.iter().enumerate() {
        t.push(vec![i as f64, *e]);
    }
    r.tables.insert("descent".into(), t);
    if cfg.output.curves {
        r.tables.insert("curve".into(), curve_table(&min.solution.immersion));
    }
    Ok(())
}

fn task_fibrate(cfg: &ExperimentConfig, r: &mut RunReport) -> Result<()> {
    let m = cfg.manifold()?;
    let family = |t: f64| cfg.immersion_at(&m, t);
    let rep = continuation(&m, &family, &cfg.family_parameters(), cfg.tolerance, &cfg.experiment.minimize)?;
    let (lo, hi) = rep.interval();
    r.scalar("t_min", lo);
    r.scalar("t_max", hi);
    r.scalar("fibers", rep.steps.len() as f64);
    if let Some((t, _)) = &rep.stopped {
        r.scalar("stopped_at", *t);
    }
    let mut t = Table::new(&["t", "volume", "residual_sup", "min_hessian_eigenvalue", "curvature_spread", "parameter_norm"]);
    let mut all_ok = true;
    for st in &rep.steps {
        all_ok &= st.residual_sup < cfg.tolerance.hslag_tol;
        t.push(vec![
            st.t,
            st.volume,
            st.residual_sup,
            st.min_hessian_eigenvalue.unwrap_or(f64::NAN),
            st.curvature_spread.unwrap_or(f64::NAN),
            st.params.iter().map(|v| v * v).sum::<f64>().sqrt(),
        ]);
        if cfg.output.curves {
            r.tables.insert(format!("curve_t{:+.6}", st.t), curve_table(&st.immersion));
        }
    }
    r.tables.insert("fibration".into(), t);
    r.verdict("hslag", all_ok);
    r.verdict("nonempty", rep.steps.len() > 1);
    Ok(())
}

fn band(cfg: &ExperimentConfig) -> Result<[f64; 2]> {
    cfg.experiment.band.ok_or_else(|| Error::ConfigInvalid("missing field `experiment.band`".into()))
}

fn task_perturb_path(cfg: &ExperimentConfig, r: &mut RunReport) -> Result<()> {
    let reference = cfg.reference_manifold()?;
    let path = cfg.positive_path(&reference, band(cfg)?, cfg.experiment.s_max, cfg.experiment.steps)?;
    let l = seed(cfg, &reference)?;
    let base = mean_curvature(&l)?;
    let mut t = Table::new(&["s", "mesh_norm", "drift", "residual_sup", "volume", "metric_change"]);
    let mut worst: f64 = 0.0;
    let mut worst_metric: f64 = 0.0;
    for (k, &s) in path.s_grid.iter().enumerate() {
        let ls = l.with_manifold(path.manifold_at(s)?);
        let md = mean_curvature(&ls)?;
        let change = induced_change(&l, &ls)?;
        worst = worst.max(md.residual_sup);
        worst_metric = worst_metric.max(change);
        let drift = if k == 0 { 0.0 } else { path.drift[k - 1] };
        t.push(vec![s, path.mesh_norm(s)?, drift, md.residual_sup, md.volume, change]);
    }
    r.scalar("max_residual", worst);
    r.scalar("max_induced_metric_change", worst_metric);
    r.scalar("seed_volume", base.volume);
    r.verdict("seed_stays_hslag", worst < 1e-7);
    r.verdict("seed_metric_fixed", worst_metric < 1e-8);
    r.tables.insert("path".into(), t);
    Ok(())
}

fn induced_change(a: &TorusImmersion, b: &TorusImmersion) -> Result<f64> {
    let ga = crate::lagrangian::induced_geometry(a)?;
    let gb = crate::lagrangian::induced_geometry(b)?;
    Ok(ga.metric.iter().zip(&gb.metric).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max))
}

fn task_positivity(cfg: &ExperimentConfig, r: &mut RunReport) -> Result<()> {
    let reference = cfg.reference_manifold()?;
    let path = cfg.positive_path(&reference, band(cfg)?, cfg.experiment.s_max, cfg.experiment.steps)?;
    let l = seed(cfg, &reference)?;
    let (generators, _) = transverse_generators(&reference, &l)?;
    let rep = positivity_experiment(&l, &path, &cfg.experiment.s_values, &generators, cfg.experiment.step)?;
    let mut t = Table::new(&["s", "subgroup", "second_derivative"]);
    let mut at_zero: f64 = 0.0;
    let mut positive = true;
    for row in &rep.rows {
        t.push(vec![row.s, row.subgroup as f64, row.second_derivative]);
        if row.s == 0.0 {
            at_zero = at_zero.max(row.second_derivative.abs());
        } else {
            positive &= row.second_derivative > 0.0;
        }
    }
    r.scalar("max_abs_at_zero", at_zero);
    r.verdict("flat_at_zero", at_zero < 1e-7);
    r.verdict("positive", positive);
    r.tables.insert("positivity".into(), t);
    Ok(())
}
