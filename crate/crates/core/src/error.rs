use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid latent vector: {0}")]
    InvalidLatent(String),

    #[error("sensor role `{0}` is not mapped on this skeleton")]
    MissingRole(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("temporal predictor has no history to encode; seed the session with an initial pose")]
    ColdStart,

    #[error("predictor window exhausted; encoder refresh required")]
    RefreshRequired,

    #[error("constraint `{0}` already exists")]
    DuplicateConstraint(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
