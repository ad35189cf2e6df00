use relayplace_core::Error as CoreError;
use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid value at `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("session `{0}` not found")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    /// The request was well formed but the solver could not satisfy it.
    #[error("{0}")]
    Unprocessable(String),

    #[error("storage error: {0}")]
    Storage(String),
}

impl ServiceError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        ServiceError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Maps a core error raised while handling the part of a request found at `prefix`.
    pub fn from_core(prefix: &str, e: CoreError) -> Self {
        let join = |field: &str| match (prefix.is_empty(), field.is_empty()) {
            (true, _) => field.to_owned(),
            (false, true) => prefix.to_owned(),
            (false, false) => format!("{prefix}.{field}"),
        };
        match e {
            CoreError::Config { field, message } => ServiceError::validation(join(&field), message),
            CoreError::Domain(m) => ServiceError::validation(join(""), m),
            e @ (CoreError::NonConvergence { .. }
            | CoreError::Infeasible(_)
            | CoreError::StateSpaceTooLarge { .. }) => ServiceError::Unprocessable(e.to_string()),
            e => ServiceError::Storage(e.to_string()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::Validation { .. } => "validation",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Unprocessable(_) => "unprocessable",
            ServiceError::Storage(_) => "storage",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            kind: self.kind(),
            field: match self {
                ServiceError::Validation { field, .. } => Some(field.clone()),
                _ => None,
            },
            message: self.to_string(),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}
