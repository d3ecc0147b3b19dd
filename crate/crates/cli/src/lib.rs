//! Plumbing shared by the `deem` binary and its tests: dataset files, the
//! Monte Carlo benchmark harness, and the exit-code convention.

pub mod bench;
pub mod dataset;

use std::path::PathBuf;

/// Process-level failure, carrying enough structure to map every outcome to
/// a stable exit code so scripts can tell mistakes apart.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] tnmm::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 for configuration or malformed-input problems, 3 for I/O failures,
    /// 4 for numerical degeneracy. Success is 0 and nothing here returns 1,
    /// which is left for panics.
    pub fn exit_code(&self) -> u8 {
        use tnmm::Error as E;
        match self {
            CliError::Usage(_) | CliError::Parse { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Model(e) => match e {
                E::DimMismatch(_)
                | E::ModeOutOfRange { .. }
                | E::InvalidParams(_)
                | E::InvalidConfig(_)
                | E::Unsupported(_) => 2,
                E::NotSpd(_)
                | E::DegenerateCluster { .. }
                | E::EmptyCluster { .. }
                | E::GridExhausted(_) => 4,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
