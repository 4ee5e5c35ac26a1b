use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mode basis: {0}")]
    InvalidBasis(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not Hermitian: {0}")]
    NotHermitian(String),
    #[error("matrix is not positive semidefinite: {0}")]
    NotPositive(String),
    #[error("degenerate intensity: {0}")]
    DegenerateIntensity(String),
    #[error("model inconsistency: {0}")]
    ModelInconsistency(String),
    #[error("unsupported mask: {0}")]
    UnsupportedMask(String),
    #[error("no signal: {0}")]
    NoSignal(String),
    #[error("empty spot: {0}")]
    EmptySpot(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("singular model: {0}")]
    SingularModel(String),
    #[error("ill-posed measurement: {0}")]
    IllPosed(String),
    #[error("invalid sampling plan: {0}")]
    Plan(String),
    #[error("incomplete plan: {0}")]
    IncompletePlan(String),
    #[error("unidentifiable fit: {0}")]
    Unidentifiable(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("{context}: {source}")]
    Stage {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the stage or item it came from; code and exit status
    /// are those of the inner error.
    pub fn within(self, context: impl Into<String>) -> Self {
        Error::Stage {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Short machine-readable code used as the CLI error prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Stage { source, .. } => source.code(),
            Error::Config(_) | Error::Json { .. } => "E_CONFIG",
            Error::NonConvergence(_) => "E_NONCONVERGENCE",
            Error::Io { .. } => "E_IO",
            Error::Manifest(_) => "E_MANIFEST",
            _ => "E_DATA",
        }
    }

    /// Process exit status: 2 config, 3 data, 4 numerical non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Config(_) | Error::Json { .. } => 2,
            Error::NonConvergence(_) => 4,
            _ => 3,
        }
    }
}
