use thiserror::Error;

/// Error type shared by the whole pipeline.
///
/// The variants map onto the CLI exit-code contract: configuration and
/// usage problems exit 1, data/schema problems exit 2, numeric failures
/// exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("data error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Data { line: Option<usize>, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data {
            line: None,
            msg: msg.into(),
        }
    }

    pub fn data_at(line: usize, msg: impl Into<String>) -> Self {
        Error::Data {
            line: Some(line),
            msg: msg.into(),
        }
    }

    /// Process exit code this error maps to (0 = success is never an error).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Invalid(_) => 1,
            Error::Data { .. } | Error::Io(_) | Error::Json(_) | Error::CheckpointMismatch(_) => 2,
            Error::Numeric(_) => 3,
            Error::ShapeMismatch { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
