use std::path::{Path, PathBuf};

/// Errors surfaced by the command-line front end, each mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("malformed artifact {}: {msg}", .path.display())]
    BadArtifact { path: PathBuf, msg: String },
    #[error("data error at row {row}: {msg}")]
    Data { row: usize, msg: String },
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
    #[error("refusing to overwrite {} (use --force)", .0.display())]
    WouldOverwrite(PathBuf),
    #[error(transparent)]
    Core(#[from] icgps_core::Error),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn config(key: impl Into<String>, msg: impl std::fmt::Display) -> Self {
        LabError::Config {
            key: key.into(),
            msg: msg.to_string(),
        }
    }

    pub fn data(row: usize, msg: impl std::fmt::Display) -> Self {
        LabError::Data { row, msg: msg.to_string() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            LabError::MissingArtifact(path.to_path_buf())
        } else {
            LabError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    /// 0 success, 1 check failure or runtime fault, 2 config, 3 artifact, 4 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::ChecksFailed(_) | LabError::Core(_) | LabError::Io { .. } | LabError::Csv(_) => 1,
            LabError::Config { .. } | LabError::WouldOverwrite(_) => 2,
            LabError::MissingArtifact(_) | LabError::BadArtifact { .. } => 3,
            LabError::Data { .. } => 4,
        }
    }
}

/// Attach a config key path to a core validation failure.
pub trait ConfigContext<T> {
    fn at(self, key: &str) -> Result<T>;
}

impl<T> ConfigContext<T> for icgps_core::Result<T> {
    fn at(self, key: &str) -> Result<T> {
        self.map_err(|e| LabError::config(key, e))
    }
}
