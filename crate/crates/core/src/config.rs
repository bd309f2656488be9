//! Experiment configuration: one TOML file per run.

use crate::deform::{
    bump_quartic_potential, integrate_positive_path, AntiInvariantField, Composite, MinimizeOptions, PathOptions,
    PerturbationPath, SurfaceStructure, Tolerances,
};
use crate::error::{Error, Result};
use crate::fields::Field;
use crate::kahler::{Backend, ChartedManifold, CpChart, Mat, StructureField, Surface};
use crate::lagrangian::{default_grid, TorusImmersion};
use crate::toric::{fiber_in_action_angle, LabelledPolytope};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Validate,
    HslagCheck,
    Spectrum,
    Rigidity,
    Deform,
    Fibrate,
    PerturbPath,
    Positivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendName {
    Flat,
    Projective,
    Sphere,
    Ellipsoid,
    Toric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldBlock {
    pub backend: BackendName,
    /// Complex dimension (flat, projective).
    pub n: Option<usize>,
    pub chart: Option<CpChart>,
    /// Flat lattice periods, one per real coordinate; default `2 pi`.
    pub periods: Option<Vec<f64>>,
    /// Ellipsoid semi-axes.
    pub axes: Option<[f64; 3]>,
    pub tilt_axis: Option<[f64; 3]>,
    pub tilt_angle: Option<f64>,
    /// Toric: polytope file (relative to the config file) or inline facets.
    pub polytope_file: Option<String>,
    pub normals: Option<Vec<Vec<i64>>>,
    pub offsets: Option<Vec<f64>>,
    /// Reserved for symplectic potentials other than the Guillemin one.
    pub potential_override: Option<String>,
    #[serde(default)]
    pub perturbation: Vec<PerturbationBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PerturbationBlock {
    /// Structure of a tilted ellipsoid, on the sphere backend.
    Ellipsoid {
        axes: [f64; 3],
        #[serde(default = "default_tilt_axis")]
        tilt_axis: [f64; 3],
        #[serde(default)]
        tilt_angle: f64,
    },
    /// `J_s` along the positive path generated by the quartic bump of the seed.
    PositivePath {
        s: f64,
        band: [f64; 2],
        #[serde(default = "default_s_max")]
        s_max: f64,
        #[serde(default = "default_steps")]
        steps: usize,
    },
    /// Anti-invariant perturbation with `T = amplitude cos(<wave, p> + phase) form`.
    AntiInvariant {
        amplitude: f64,
        wave: Vec<f64>,
        #[serde(default)]
        phase: f64,
        form: Vec<Vec<f64>>,
    },
}

fn default_tilt_axis() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}
fn default_s_max() -> f64 {
    0.1
}
fn default_steps() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LagrangianBlock {
    /// Fiber `{point} x T^n` of an action-angle chart.
    MomentFiber { point: Vec<f64> },
    /// Explicit Fourier data: an immersion snapshot in JSON.
    Snapshot { path: String },
    /// Fibers at `center + t direction`; the seed is `t = 0`.
    Parallels {
        center: Vec<f64>,
        direction: Option<Vec<f64>>,
        t: Vec<f64>,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizationBlock {
    /// Samples per torus axis.
    pub grid: Option<usize>,
    /// Highest Fourier mode per axis of the stability operator basis.
    pub max_mode: Option<usize>,
    pub fd_step: Option<f64>,
    pub kernel_tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentBlock {
    /// Starting group parameters of the orbit search.
    pub start: Option<Vec<f64>>,
    pub minimize: MinimizeOptions,
    /// Chart band of the positive path (path tasks).
    pub band: Option<[f64; 2]>,
    pub s_max: f64,
    pub steps: usize,
    pub intervals: usize,
    pub angles: usize,
    pub s_values: Vec<f64>,
    /// Group-parameter step of the second difference.
    pub step: f64,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        ExperimentBlock {
            start: None,
            minimize: MinimizeOptions::default(),
            band: None,
            s_max: 0.1,
            steps: 20,
            intervals: 192,
            angles: 16,
            s_values: vec![0.0, 0.02, 0.05, 0.1],
            step: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub report: String,
    pub csv: bool,
    /// Also write curve samples of every output immersion.
    pub curves: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { report: "report.json".into(), csv: true, curves: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub manifold: ManifoldBlock,
    pub lagrangian: LagrangianBlock,
    #[serde(default)]
    pub discretization: DiscretizationBlock,
    #[serde(default)]
    pub tolerance: Tolerances,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputBlock,
    /// Directory for relative paths; set by the loader.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn missing(key: &str) -> Error {
    Error::ConfigInvalid(format!("missing field `{key}`"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.message().to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, text))
    }

    /// Schema checks that depend on several keys at once.
    fn check(&self) -> Result<()> {
        let m = &self.manifold;
        match m.backend {
            BackendName::Flat | BackendName::Projective => {
                m.n.ok_or_else(|| missing("manifold.n"))?;
            }
            BackendName::Ellipsoid => {
                m.axes.ok_or_else(|| missing("manifold.axes"))?;
            }
            BackendName::Toric => {
                if m.polytope_file.is_none() && (m.normals.is_none() || m.offsets.is_none()) {
                    return Err(missing("manifold.polytope_file"));
                }
            }
            BackendName::Sphere => {}
        }
        if m.potential_override.is_some() {
            return Err(Error::ConfigInvalid("`manifold.potential_override` is reserved and not supported".into()));
        }
        if let Some(g) = self.discretization.grid {
            if g < 4 || g % 2 != 0 {
                return Err(Error::ConfigInvalid("`discretization.grid` must be even and at least 4".into()));
            }
        }
        if matches!(self.task, Task::PerturbPath | Task::Positivity) && self.experiment.band.is_none() {
            return Err(missing("experiment.band"));
        }
        if self.task == Task::Fibrate && !matches!(self.lagrangian, LagrangianBlock::Parallels { .. }) {
            return Err(Error::ConfigInvalid("task `fibrate` needs `lagrangian.kind = \"parallels\"`".into()));
        }
        Ok(())
    }

    fn resolve(&self, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn reference_manifold(&self) -> Result<ChartedManifold> {
        let m = &self.manifold;
        let backend = match m.backend {
            BackendName::Flat => {
                let n = m.n.ok_or_else(|| missing("manifold.n"))?;
                let periods = m.periods.clone().unwrap_or_else(|| vec![2.0 * PI; 2 * n]);
                if periods.len() != 2 * n {
                    return Err(Error::ConfigInvalid(format!("`manifold.periods` needs {} entries", 2 * n)));
                }
                Backend::FlatTorus { periods }
            }
            BackendName::Projective => Backend::ProjectiveSpace {
                n: m.n.ok_or_else(|| missing("manifold.n"))?,
                chart: m.chart.unwrap_or(CpChart::ActionAngle),
            },
            BackendName::Sphere => Backend::SurfaceOfRevolution(Surface::round()),
            BackendName::Ellipsoid => Backend::SurfaceOfRevolution(Surface::tilted(
                m.axes.ok_or_else(|| missing("manifold.axes"))?,
                m.tilt_axis.unwrap_or_else(default_tilt_axis),
                m.tilt_angle.unwrap_or(0.0),
            )),
            BackendName::Toric => Backend::Toric(self.polytope()?),
        };
        let mut out = ChartedManifold::new(backend);
        if let Some(h) = self.discretization.fd_step {
            out.fd_step = h;
        }
        Ok(out)
    }

    pub fn polytope(&self) -> Result<LabelledPolytope> {
        let m = &self.manifold;
        if let Some(file) = &m.polytope_file {
            let path = self.resolve(file);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            return LabelledPolytope::parse(&text);
        }
        match (&m.normals, &m.offsets) {
            (Some(nu), Some(c)) => Ok(LabelledPolytope::new(nu.clone(), c.clone())),
            _ => Err(missing("manifold.polytope_file")),
        }
    }

    pub fn grid(&self, n: usize) -> usize {
        self.discretization.grid.unwrap_or_else(|| default_grid(n))
    }

    fn fiber_dim(&self) -> Option<usize> {
        match &self.lagrangian {
            LagrangianBlock::MomentFiber { point } => Some(point.len()),
            LagrangianBlock::Parallels { center, .. } => Some(center.len()),
            LagrangianBlock::Snapshot { .. } => None,
        }
    }

    /// Member of the configured family at parameter `t` (the seed is `t = 0`).
    pub fn immersion_at(&self, manifold: &ChartedManifold, t: f64) -> Result<TorusImmersion> {
        let check_chart = |len: usize| -> Result<()> {
            if len != manifold.n() {
                return Err(Error::ConfigInvalid(format!(
                    "lagrangian point has {len} entries, manifold needs {}",
                    manifold.n()
                )));
            }
            if let Backend::ProjectiveSpace { chart: CpChart::Affine, .. } = manifold.backend {
                return Err(Error::ConfigInvalid("moment fibers need `manifold.chart = \"action-angle\"`".into()));
            }
            Ok(())
        };
        match &self.lagrangian {
            LagrangianBlock::MomentFiber { point } => {
                check_chart(point.len())?;
                Ok(fiber_in_action_angle(manifold.clone(), point, self.grid(point.len())))
            }
            LagrangianBlock::Parallels { center, direction, .. } => {
                check_chart(center.len())?;
                let dir = direction.clone().unwrap_or_else(|| {
                    let mut d = vec![0.0; center.len()];
                    d[0] = 1.0;
                    d
                });
                if dir.len() != center.len() {
                    return Err(Error::ConfigInvalid("`lagrangian.direction` length differs from `center`".into()));
                }
                let x: Vec<f64> = center.iter().zip(&dir).map(|(c, d)| c + t * d).collect();
                Ok(fiber_in_action_angle(manifold.clone(), &x, self.grid(x.len())))
            }
            LagrangianBlock::Snapshot { path } => {
                let path = self.resolve(path);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                Ok(TorusImmersion::from_json(&text)?.with_manifold(manifold.clone()))
            }
        }
    }

    pub fn path_options(&self, band: [f64; 2], s_max: f64, steps: usize) -> PathOptions {
        let mut o = PathOptions::new((band[0], band[1]), s_max, steps);
        o.intervals = self.experiment.intervals;
        o.angles = self.experiment.angles;
        o
    }

    /// Positive path generated by the quartic bump of the seed.
    pub fn positive_path(&self, reference: &ChartedManifold, band: [f64; 2], s_max: f64, steps: usize) -> Result<PerturbationPath> {
        let seed = self.immersion_at(reference, 0.0)?;
        let phi: Field = Arc::new(bump_quartic_potential(&seed)?);
        integrate_positive_path(reference, phi, &self.path_options(band, s_max, steps))
    }

    /// Reference manifold with every configured perturbation applied.
    pub fn manifold(&self) -> Result<ChartedManifold> {
        let reference = self.reference_manifold()?;
        let dim = reference.real_dimension();
        let mut fields: Vec<Arc<dyn StructureField>> = Vec::new();
        for p in &self.manifold.perturbation {
            match p {
                PerturbationBlock::Ellipsoid { axes, tilt_axis, tilt_angle } => {
                    if self.manifold.backend != BackendName::Sphere {
                        return Err(Error::ConfigInvalid("ellipsoid perturbations need `backend = \"sphere\"`".into()));
                    }
                    fields.push(Arc::new(SurfaceStructure(Surface::tilted(*axes, *tilt_axis, *tilt_angle))));
                }
                PerturbationBlock::PositivePath { s, band, s_max, steps } => {
                    let path = self.positive_path(&reference, *band, *s_max, *steps)?;
                    if let Some(f) = path.structure_at(*s)? {
                        fields.push(f);
                    }
                }
                PerturbationBlock::AntiInvariant { amplitude, wave, phase, form } => {
                    if wave.len() != dim || form.len() != dim || form.iter().any(|r| r.len() != dim) {
                        return Err(Error::ConfigInvalid(format!("anti-invariant `wave` and `form` need dimension {dim}")));
                    }
                    let s = Mat::from_fn(dim, dim, |i, j| 0.5 * (form[i][j] + form[j][i]));
                    let (a, w, ph) = (*amplitude, wave.clone(), *phase);
                    fields.push(Arc::new(AntiInvariantField::new("anti-invariant", move |p: &[f64]| {
                        let arg: f64 = w.iter().zip(p).map(|(k, x)| k * x).sum::<f64>() + ph;
                        &s * (a * arg.cos())
                    })));
                }
            }
        }
        Ok(match fields.len() {
            0 => reference,
            1 => reference.with_perturbation(fields.pop().unwrap()),
            _ => reference.with_perturbation(Arc::new(Composite(fields))),
        })
    }

    pub fn family_parameters(&self) -> Vec<f64> {
        match &self.lagrangian {
            LagrangianBlock::Parallels { t, .. } => t.clone(),
            _ => vec![0.0],
        }
    }

    pub fn seed_dimension(&self) -> Option<usize> {
        self.fiber_dim()
    }
}
