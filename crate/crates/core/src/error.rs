use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("outside world: {0}")]
    OutsideWorld(String),

    #[error("corrupt world: {0}")]
    CorruptWorld(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic")]
    BadMagic,

    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    #[error("truncated: {0}")]
    Truncated(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("kernel degenerate: factorization failed after jitter {jitter:e}")]
    KernelDegenerate { jitter: f64 },

    #[error("invalid temporal kernel: {0}")]
    InvalidTemporalKernel(String),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("codec: {0}")]
    Codec(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("all agents dead at slot {0}")]
    FleetDead(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
