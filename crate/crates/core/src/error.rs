use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] ndgrad::Error),
    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),
    #[error("invalid action {action} for an action set of size {size}")]
    InvalidAction { action: usize, size: usize },
    #[error("step after terminal; reset the environment first")]
    StepAfterTerminal,
    #[error("frame must be {expected} bytes, got {got}")]
    FrameSize { expected: usize, got: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("archive: {0}")]
    Archive(String),
    #[error("archive episode {episode}: {reason}")]
    ArchiveEpisode { episode: usize, reason: String },
    #[error("truncated archive: last complete episode is {last_complete:?}")]
    Truncated { last_complete: Option<usize> },
    #[error("transfer: {0}")]
    Transfer(String),
    #[error("pre-training diverged at update {update}: loss {loss}")]
    Diverged { update: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
