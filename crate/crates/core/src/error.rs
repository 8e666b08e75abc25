use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate quad {index}: three collinear reference points")]
    DegenerateQuad { index: usize },

    #[error("non-finite value in {what} at node {node}")]
    NonFinite { node: usize, what: String },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("schema violation in {path}: {detail}")]
    Schema { path: String, detail: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {detail}")]
    Json { path: String, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}

impl Error {
    /// Stable machine-readable tag, used by the CLI error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidMesh(_) => "invalid_mesh",
            Error::DegenerateQuad { .. } => "degenerate_quad",
            Error::NonFinite { .. } => "non_finite",
            Error::DimMismatch(_) => "dim_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Schema { .. } => "schema",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<String>, detail: impl ToString) -> Self {
        Error::Json {
            path: path.into(),
            detail: detail.to_string(),
        }
    }

    pub fn schema(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
