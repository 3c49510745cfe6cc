use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration: missing mapped column, invalid option values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: model expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Least-squares system could not be solved even with ridge jitter.
    #[error("rank-deficient design matrix (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("unsupported artifact schema version {found} (this build reads version {expected})")]
    SchemaVersion { found: u64, expected: u64 },

    /// Malformed model artifact; `path` is the JSON path of the offending field.
    #[error("malformed artifact at `{path}`: {message}")]
    Artifact { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
