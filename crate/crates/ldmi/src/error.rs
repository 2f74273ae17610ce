use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// usage/missing-input problems exit 2, runtime failures exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("nothing to analyze")]
    EmptyTitleList,

    #[error("cache miss in offline mode (key {0})")]
    OfflineCacheMiss(String),

    #[error("llm call budget exhausted after {completed} owners; re-run to resume")]
    BudgetExhausted { completed: usize },

    #[error("llm request failed after {attempts} attempts: {reason}")]
    LlmExhausted { attempts: u32, reason: String },

    #[error("coverage instance too large for exact solve: {rows} rows (limit {limit})")]
    InstanceTooLarge { rows: usize, limit: usize },

    #[error("training diverged at iteration {iteration}: {what} is not finite")]
    Diverged { iteration: usize, what: String },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingInput(_) | Error::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
