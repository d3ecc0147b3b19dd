use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("mode {mode} out of range for an order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "cluster {cluster} degenerated: total responsibility {weight:.3e} \
         is below one effective observation"
    )]
    DegenerateCluster { cluster: usize, weight: f64 },

    #[error("k-means could not keep all {k} clusters non-empty on {n} points")]
    EmptyCluster { k: usize, n: usize },

    #[error("every lambda in the grid failed; last error: {0}")]
    GridExhausted(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}
