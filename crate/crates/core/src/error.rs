use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GlaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GlaError {
    /// Input values violate a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Tensor shapes or dimensions do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("target at {range_m:.3} m is beyond the unambiguous range {max_range_m:.3} m")]
    RangeBound { range_m: f64, max_range_m: f64 },

    #[error("numerical conditioning error: {0}")]
    Conditioning(String),

    /// A NaN or infinity appeared during optimization.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("embedding lookup failed: no entry for prompt {0:?}")]
    Lookup(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{path}: missing or invalid field `{field}`")]
    Field { path: PathBuf, field: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image encoding error: {0}")]
    Image(String),
}

impl GlaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GlaError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        GlaError::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the `gla` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            GlaError::Numerical(_) | GlaError::Conditioning(_) => 3,
            GlaError::Config(_) => 1,
            _ => 2,
        }
    }
}
