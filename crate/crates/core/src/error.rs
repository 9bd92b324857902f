use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate face {face} (area {area:e})")]
    DegenerateFace { face: usize, area: f64 },

    #[error("mesh has too few vertices ({0})")]
    EmptyMesh(usize),

    #[error("vertex {vertex} has no incident face")]
    IsolatedVertex { vertex: usize },

    #[error("vertex {vertex} has a vanishing normal")]
    DegenerateNormal { vertex: usize },

    #[error("patchwork field is constant; hue normalization is undefined")]
    ConstantField,

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {worst_residual:e})")]
    ConvergenceFailure {
        iterations: usize,
        worst_residual: f64,
        residuals: Vec<f64>,
    },

    #[error("linear solver failure: {0}")]
    Factorization(String),

    #[error("negative diffusion time {0}")]
    NegativeTime(f64),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot((usize, usize)),

    #[error("non-finite gradient on parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("level {level} out of range 1..={levels}")]
    LevelOutOfRange { level: usize, levels: usize },

    #[error("zero-length vector in row {row}")]
    ZeroVector { row: usize },

    #[error("empty vertex subset")]
    EmptySubset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible data: {0}")]
    Incompatible(String),

    #[error("corrupt container: {0}")]
    Format(String),

    #[error("numeric failure at iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for errors that stem from floating point breakdown rather than
    /// bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NonFiniteGradient(_)
                | Error::ConvergenceFailure { .. }
                | Error::Factorization(_)
                | Error::Training { .. }
        )
    }
}
