use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// The variants group into three families that the CLI maps onto exit codes:
/// configuration/argument problems, data problems (I/O, parsing, corrupt
/// containers), and numerical problems (failed factorizations, invalid
/// covariance or kernel matrices, divergence).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported arc-cosine degree {0} (supported: 0, 1, 2)")]
    UnsupportedDegree(u32),

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("invalid kernel matrix: {0}")]
    InvalidKernel(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("config error at key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("corrupt model at byte offset {offset}: {msg}")]
    CorruptModel { offset: usize, msg: String },

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn corrupt(offset: usize, msg: impl Into<String>) -> Self {
        Error::CorruptModel {
            offset,
            msg: msg.into(),
        }
    }

    /// Wraps the error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Argument(_) | Error::UnsupportedDegree(_) => 2,
            Error::Io { .. }
            | Error::Format(_)
            | Error::Consistency(_)
            | Error::Parse { .. }
            | Error::CorruptModel { .. } => 3,
            Error::InvalidCovariance(_) | Error::InvalidKernel(_) | Error::Numerical(_) | Error::Divergence(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}

/// Attaches a stage tag to the error side of a result.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
