use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarSeed(Vec<usize>),
    #[error("unknown parameter block `{0}`")]
    UnknownBlock(String),
    #[error("duplicate parameter block `{0}`")]
    DuplicateBlock(String),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("loss builder is not deterministic: {0} vs {1}")]
    NonDeterministic(f64, f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
