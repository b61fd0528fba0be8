use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] demolab::Error),
    #[error(transparent)]
    Grad(#[from] ndgrad::Error),
    #[error(transparent)]
    Server(#[from] demo_server::Error),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("learning curve: {0}")]
    Curve(String),
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    TomlWrite(#[from] toml::ser::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
