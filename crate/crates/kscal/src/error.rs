use std::path::PathBuf;

/// Errors surfaced by the harness and the command line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] kscal_core::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{path}: row {row}: {message}")]
    Data { path: PathBuf, row: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 1;
    pub const DIVERGED: u8 = 2;
    pub const DEGENERATE: u8 = 3;
}

impl Error {
    pub fn exit_code(&self) -> u8 {
        use kscal_core::Error as C;
        match self {
            Error::Core(C::Diverged { .. }) => exit::DIVERGED,
            Error::Core(C::NotPositiveDefinite { .. } | C::SingularMatrix { .. } | C::GeometryUnsupported(_)) => {
                exit::DEGENERATE
            }
            _ => exit::CONFIG,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
