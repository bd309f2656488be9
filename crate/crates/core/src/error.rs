use thiserror::Error;

/// Every failure the toolkit can report. Each variant has a stable
/// machine-readable code, see [`Error::code`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // geometry backends
    #[error("point {point:?} lies outside every chart")]
    PointOutsideChart { point: Vec<f64> },
    #[error("metric degenerate at {point:?}: smallest eigenvalue {min_eig:e}")]
    DegenerateMetric { point: Vec<f64>, min_eig: f64 },
    #[error("hamiltonian flow left the atlas at time {time}")]
    FlowLeftAtlas { time: f64 },
    #[error("operation not supported by backend {backend}")]
    UnsupportedBackend { backend: String },

    // polytopes and reduction
    #[error("polytope is not compact")]
    NonCompact,
    #[error("vertex {vertex:?} is not simple: {facets} facets meet")]
    NonSimpleVertex { vertex: Vec<f64>, facets: usize },
    #[error("vertex {vertex:?} fails the lattice basis condition (det {det})")]
    NonUnimodularVertex { vertex: Vec<f64>, det: f64 },
    #[error("point {point:?} is on or outside the polytope boundary")]
    BoundaryPoint { point: Vec<f64> },
    #[error("homogeneous coordinates are all zero")]
    ZeroVector,
    #[error("orbit through the point collapses")]
    DegenerateOrbit,
    #[error("sample {index} is off the level set (deviation {deviation:e})")]
    OffLevelSet { index: usize, deviation: f64 },
    #[error("cannot parse polytope: {0}")]
    PolytopeParse(String),

    // immersions
    #[error("induced metric degenerate at node {node}")]
    DegenerateInducedMetric { node: usize },
    #[error("immersion is not Lagrangian: defect {defect:e}")]
    NotLagrangian { defect: f64 },
    #[error("deformation too large for tube radius {radius:e} (displacement {displacement:e})")]
    TubeTooSmall { radius: f64, displacement: f64 },
    #[error("harmonic form solver diverged: {0}")]
    SolverDiverged(String),
    #[error("fibration family overlaps itself (min separation {separation:e})")]
    FamilyOverlap { separation: f64 },
    #[error("snapshot format error: {0}")]
    Snapshot(String),

    // stability operator
    #[error("analytic assembly needs an integrable structure; use the finite-difference operator")]
    NonIntegrableBackend,
    #[error("grid of {grid} points per axis under-resolves modes up to {modes}")]
    QuadratureUnderResolved { grid: usize, modes: usize },
    #[error("eigen solver failed: {0}")]
    EigenSolverFailure(String),

    // deformation pipeline
    #[error("newton iteration diverged; residual history {history:?}")]
    NewtonDiverged { history: Vec<f64> },
    #[error("obstruction space lost rank: {rank} of {expected}")]
    ObstructionRankLoss { rank: usize, expected: usize },
    #[error("stability operator ill-conditioned: condition number {condition:e}")]
    IllConditionedBox { condition: f64 },
    #[error("descent stalled at gradient norm {gradient:e}")]
    DescentStalled { gradient: f64 },
    #[error("minimum is degenerate: smallest hessian eigenvalue {min_eig:e}")]
    DegenerateMinimum { min_eig: f64 },
    #[error("continuation stopped at t = {t}: {reason}")]
    ContinuationStopped { t: f64, reason: String },
    #[error("compatibility drift {drift:e} exceeded tolerance")]
    ConstraintDriftExceeded { drift: f64 },
    #[error("subgroup is not transverse to the stabilizer of the immersion")]
    NonTransverseSubgroup,

    // orchestration
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable error code, unique per variant.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            PointOutsideChart { .. } => "E_POINT_OUTSIDE_CHART",
            DegenerateMetric { .. } => "E_DEGENERATE_METRIC",
            FlowLeftAtlas { .. } => "E_FLOW_LEFT_ATLAS",
            UnsupportedBackend { .. } => "E_UNSUPPORTED_BACKEND",
            NonCompact => "E_NON_COMPACT",
            NonSimpleVertex { .. } => "E_NON_SIMPLE_VERTEX",
            NonUnimodularVertex { .. } => "E_NON_UNIMODULAR_VERTEX",
            BoundaryPoint { .. } => "E_BOUNDARY_POINT",
            ZeroVector => "E_ZERO_VECTOR",
            DegenerateOrbit => "E_DEGENERATE_ORBIT",
            OffLevelSet { .. } => "E_OFF_LEVEL_SET",
            PolytopeParse(_) => "E_POLYTOPE_PARSE",
            DegenerateInducedMetric { .. } => "E_DEGENERATE_INDUCED_METRIC",
            NotLagrangian { .. } => "E_NOT_LAGRANGIAN",
            TubeTooSmall { .. } => "E_TUBE_TOO_SMALL",
            SolverDiverged(_) => "E_SOLVER_DIVERGED",
            FamilyOverlap { .. } => "E_FAMILY_OVERLAP",
            Snapshot(_) => "E_SNAPSHOT",
            NonIntegrableBackend => "E_NON_INTEGRABLE_BACKEND",
            QuadratureUnderResolved { .. } => "E_QUADRATURE_UNDER_RESOLVED",
            EigenSolverFailure(_) => "E_EIGEN_SOLVER_FAILURE",
            NewtonDiverged { .. } => "E_NEWTON_DIVERGED",
            ObstructionRankLoss { .. } => "E_OBSTRUCTION_RANK_LOSS",
            IllConditionedBox { .. } => "E_ILL_CONDITIONED_BOX",
            DescentStalled { .. } => "E_DESCENT_STALLED",
            DegenerateMinimum { .. } => "E_DEGENERATE_MINIMUM",
            ContinuationStopped { .. } => "E_CONTINUATION_STOPPED",
            ConstraintDriftExceeded { .. } => "E_CONSTRAINT_DRIFT_EXCEEDED",
            NonTransverseSubgroup => "E_NON_TRANSVERSE_SUBGROUP",
            ConfigInvalid(_) => "E_CONFIG_INVALID",
            Io(_) => "E_IO",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
