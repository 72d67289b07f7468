use std::io;

use krflow_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{0}")]
    Core(#[from] CoreError),

    #[error("run aborted at step {step}: {source}")]
    Aborted { step: u64, source: CoreError },

    #[error("{failed} of {total} sweep runs failed")]
    PartialSweep { failed: usize, total: usize },

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl HarnessError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        HarnessError::Config { field: field.to_string(), message: message.into() }
    }

    /// Config-stage errors from the core library keep their own message.
    pub fn from_config(e: CoreError) -> Self {
        match e {
            CoreError::Configuration(m) => {
                let (field, msg) =
                    m.split_once(": ").map(|(f, m)| (f.to_string(), m.to_string())).unwrap_or(("config".into(), m));
                HarnessError::Config { field, message: msg }
            }
            other => HarnessError::Core(other),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        HarnessError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// 2 for bad input, 3 for numeric aborts, 4 for partial sweeps, 1 for i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            HarnessError::Core(e) | HarnessError::Aborted { source: e, .. } => match e {
                CoreError::InvalidFlow(_)
                | CoreError::InvalidParameter(_)
                | CoreError::UnsupportedFlow(_)
                | CoreError::Automorphism(_)
                | CoreError::Configuration(_) => 2,
                _ => 3,
            },
            HarnessError::PartialSweep { .. } => 4,
            HarnessError::Io { .. } => 1,
        }
    }
}
