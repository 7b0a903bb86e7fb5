use std::path::PathBuf;

/// Failures of the session service. Each maps to an HTTP status and a
/// stable machine-readable code.
#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no session with id `{0}`")]
    SessionNotFound(String),

    #[error("artifact not found: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("malformed request: {0}")]
    BadRequest(String),

    #[error("mention keys not pending in this session: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("annotations leave mentions undecided: {}", .0.join(", "))]
    Incomplete(Vec<String>),

    #[error("already annotated: {}", .0.join(", "))]
    AlreadyAnnotated(Vec<String>),

    #[error("session `{id}` is {status}, not awaiting annotation")]
    WrongState { id: String, status: String },

    #[error("session `{0}` has no result yet")]
    NoResult(String),

    #[error(transparent)]
    Pipeline(#[from] supercd::Error),
}

impl ServiceError {
    /// Short code reported in the `error` field of the JSON error body.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::SessionNotFound(_) => "session_not_found",
            ServiceError::MissingArtifact(_) => "missing_artifact",
            ServiceError::InvalidConfig(_) => "invalid_config",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::UnknownKeys(_) => "unknown_mention_keys",
            ServiceError::Incomplete(_) => "incomplete_annotation",
            ServiceError::AlreadyAnnotated(_) => "already_annotated",
            ServiceError::WrongState { .. } => "invalid_state",
            ServiceError::NoResult(_) => "result_not_ready",
            ServiceError::Pipeline(_) => "pipeline_error",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::SessionNotFound(_) | ServiceError::MissingArtifact(_) => 404,
            ServiceError::BadRequest(_) => 400,
            ServiceError::InvalidConfig(_) | ServiceError::UnknownKeys(_) | ServiceError::Incomplete(_) => 422,
            ServiceError::AlreadyAnnotated(_) | ServiceError::WrongState { .. } | ServiceError::NoResult(_) => 409,
            ServiceError::Pipeline(_) => 500,
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
