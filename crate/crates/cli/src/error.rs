use recoil_core::RecoilError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{file}:{line}: {message}")]
    Config { file: String, line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical check `{check}` failed: {detail}")]
    NotConverged { check: &'static str, detail: String },

    #[error(transparent)]
    Core(RecoilError),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{count} row(s) differ by more than {tol:e}")]
    OutOfTolerance { count: usize, tol: f64 },
}

impl From<RecoilError> for CliError {
    fn from(e: RecoilError) -> Self {
        match e {
            RecoilError::NotConverged { check, detail } => CliError::NotConverged { check, detail },
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::OutOfTolerance { .. } => 1,
            CliError::Config { .. } => 2,
            CliError::NotConverged { .. } => 3,
            CliError::Schema(_) => 4,
            _ => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
