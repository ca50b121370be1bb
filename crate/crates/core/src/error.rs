use std::path::PathBuf;

/// Errors raised anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("no points")]
    NoPoints,

    #[error("empty sphere")]
    EmptySphere,

    #[error("k = {k} must be smaller than the number of points ({n})")]
    NeighborCount { k: usize, n: usize },

    #[error("corruption exhausted the cloud: {0}")]
    Exhausted(String),

    #[error("non-finite value in layer `{layer}`")]
    NonFinite { layer: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{context} `{}`: {source}", path.display())]
    Io {
        context: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short, stable category string used by the CLI for machine-readable exit lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) | Error::NoPoints | Error::NeighborCount { .. } => "validation",
            Error::EmptySphere => "sampling",
            Error::Exhausted(_) => "corruption",
            Error::NonFinite { .. } => "numeric",
            Error::Shape(_) => "shape",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn io(context: &'static str, path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            context,
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
