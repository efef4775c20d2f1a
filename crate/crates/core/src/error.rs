use thiserror::Error;

/// Failures surfaced by the geometry, fitting and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("cannot dilate hull: {points} points but {hull_vertices} hull vertices")]
    CannotDilate { points: usize, hull_vertices: usize },
    #[error("empty window: {0}")]
    EmptyWindow(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("empty pattern: {0}")]
    EmptyPattern(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("all summary functions are empty for pair ({0}, {1})")]
    AllEmpty(usize, usize),
    #[error("zero hardcore distance for marks ({i}, {j}) in patient {patient}: duplicated locations")]
    ZeroHardcore { patient: String, i: usize, j: usize },
    #[error("data point {index} of patient {patient} violates the hardcore of its own model")]
    InconsistentHardcore { patient: String, index: usize },
    #[error("singular design; aliased columns: {}", .0.join(", "))]
    SingularDesign(Vec<String>),
    #[error("IRLS did not converge after {iterations} iterations (deviance trace: {trace:?})")]
    NonConvergence { iterations: usize, trace: Vec<f64> },
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    #[error("unstable interaction: log conditional-intensity bound is {bound}")]
    UnstableSpec { bound: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag used by the command-line error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::CannotDilate { .. } => "cannot_dilate",
            Error::EmptyWindow(_) => "empty_window",
            Error::Schema(_) => "schema",
            Error::EmptyPattern(_) => "empty_pattern",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::AllEmpty(..) => "all_empty",
            Error::ZeroHardcore { .. } => "zero_hardcore",
            Error::InconsistentHardcore { .. } => "inconsistent_hardcore",
            Error::SingularDesign(_) => "singular_design",
            Error::NonConvergence { .. } => "non_convergence",
            Error::DegenerateModel(_) => "degenerate_model",
            Error::UnstableSpec { .. } => "unstable_spec",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
