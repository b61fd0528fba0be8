#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] demolab::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
