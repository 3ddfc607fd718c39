use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type AppResult<T> = Result<T, AppError>;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("io: {0}")]
    BareIo(#[from] io::Error),
    #[error("{}invalid {context} data: {reason}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Format {
        context: String,
        reason: String,
        #[doc(hidden)]
        path: Option<PathBuf>,
    },
    #[error("computation failed: {0}")]
    Compute(#[from] alps_core::Error),
    #[error("oracle check failed: {0}")]
    OracleFailed(String),
}

impl AppError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        AppError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn with_path(self, p: &Path) -> Self {
        match self {
            AppError::BareIo(source) => AppError::io(p, source),
            AppError::Format {
                context, reason, ..
            } => AppError::Format {
                context,
                reason,
                path: Some(p.to_path_buf()),
            },
            other => other,
        }
    }

    /// Process exit code for each error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config { .. } => 2,
            AppError::Io { .. } | AppError::BareIo(_) | AppError::Format { .. } => 3,
            AppError::Compute(_) => 4,
            AppError::OracleFailed(_) => 5,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            AppError::Config { .. } => "config",
            AppError::Io { .. } | AppError::BareIo(_) | AppError::Format { .. } => "io",
            AppError::Compute(_) => "compute",
            AppError::OracleFailed(_) => "oracle",
        }
    }
}
