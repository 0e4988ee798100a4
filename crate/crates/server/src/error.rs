use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Session(#[from] dcoach::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Config(String),
    #[error("connection handler stopped unexpectedly")]
    IoThread,
}

pub type Result<T, E = ServerError> = std::result::Result<T, E>;
