use regpol_core::ErrorKind;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config at {path}: {message}")]
    Config { path: String, message: String },

    #[error("invalid override \"{0}\": expected key=value")]
    Override(String),

    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("thread pool: {0}")]
    ThreadPool(String),

    #[error("{failed} of {total} replications failed (limit 10%); first error: {first}")]
    ReplicationFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error(transparent)]
    Core(#[from] regpol_core::Error),
}

impl CliError {
    /// 2 for configuration, 3 for data, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigRead { .. } | CliError::Config { .. } | CliError::Override(_) | CliError::ThreadPool(_) => 2,
            CliError::Write { .. } => 3,
            CliError::ReplicationFailures { .. } => 4,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            },
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::ConfigRead { .. } => "ConfigUnreadable",
            CliError::Config { .. } => "InvalidConfig",
            CliError::Override(_) => "InvalidOverride",
            CliError::Write { .. } => "OutputWriteFailed",
            CliError::ThreadPool(_) => "ThreadPool",
            CliError::ReplicationFailures { .. } => "ReplicationFailures",
            CliError::Core(e) => e.code(),
        }
    }

    /// Single-line machine-readable form written to stderr.
    pub fn to_json_line(&self) -> String {
        let mut v = json!({ "error": self.code(), "message": self.to_string() });
        let path = match self {
            CliError::Config { path, .. } => Some(path.clone()),
            CliError::Core(regpol_core::Error::InvalidDgp { path, .. }) => Some(path.clone()),
            _ => None,
        };
        if let Some(p) = path {
            v["path"] = json!(p);
        }
        v.to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
