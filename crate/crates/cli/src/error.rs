use relayplace_core::Error as CoreError;
use serde_json::json;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Service(#[from] relayplace_service::ServiceError),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Core(CoreError::config(field, message))
    }

    /// 0 ok, 1 other failure, 2 bad configuration or usage, 3 no convergence, 4 infeasible.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                CoreError::NonConvergence { .. } => 3,
                CoreError::Infeasible(_) => 4,
                CoreError::Config { .. } | CoreError::Domain(_) | CoreError::StateSpaceTooLarge { .. } => 2,
                CoreError::Io(_) | CoreError::Csv(_) | CoreError::Json(_) => 1,
            },
            CliError::Io(_) | CliError::Service(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                CoreError::NonConvergence { .. } => "non_convergence",
                CoreError::Infeasible(_) => "infeasible",
                CoreError::Config { .. } => "config",
                CoreError::Domain(_) => "domain",
                CoreError::StateSpaceTooLarge { .. } => "state_space_too_large",
                CoreError::Io(_) | CoreError::Csv(_) | CoreError::Json(_) => "io",
            },
            CliError::Io(_) => "io",
            CliError::Service(_) => "service",
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let mut body = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Core(CoreError::Config { field, .. }) = self {
            body["field"] = json!(field);
        }
        json!({ "error": body }).to_string()
    }
}
