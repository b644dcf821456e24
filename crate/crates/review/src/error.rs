use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("detection id {0} exists in more than one drive; use drive:id")]
    Ambiguous(String),
    #[error("invalid label {0:?}; expected parking, non_parking or cross")]
    InvalidLabel(String),
    #[error("invalid request body: {0}")]
    BadRequest(String),
    #[error("no drives to review")]
    NoDrives,
    #[error("drive {0} appears more than once")]
    DuplicateDrive(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Replay { path: PathBuf, line: usize, message: String },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
}

impl ReviewError {
    pub fn code(&self) -> &'static str {
        match self {
            ReviewError::NotFound(_) => "not_found",
            ReviewError::Ambiguous(_) => "ambiguous_id",
            ReviewError::InvalidLabel(_) => "invalid_label",
            ReviewError::BadRequest(_) => "bad_request",
            ReviewError::NoDrives | ReviewError::DuplicateDrive(_) => "invalid_state",
            ReviewError::Io { .. } | ReviewError::Replay { .. } | ReviewError::Bind { .. } => "internal",
        }
    }
}
