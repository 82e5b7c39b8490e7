use std::path::{Path, PathBuf};

/// Errors surfaced by the harness, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] segweight_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// A file exists but its content cannot be parsed.
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    /// Invalid configuration or a violated precondition.
    #[error("{0}")]
    Contract(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        HarnessError::Format { path: path.to_path_buf(), msg: msg.into() }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        HarnessError::Contract(msg.into())
    }

    /// 1 contract violation, 2 I/O error, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(e) if e.is_contract() => 1,
            HarnessError::Core(_) => 3,
            HarnessError::Io { .. } | HarnessError::Format { .. } => 2,
            HarnessError::Contract(_) => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| HarnessError::io(path, e))
    }
}
