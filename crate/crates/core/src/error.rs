use thiserror::Error;

/// Errors raised across the simulator.
///
/// Each variant carries a short machine-readable kind (see [`Error::kind`]) so the
/// CLI can report a one-line `error: <kind>: <message>`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Encoding(String),
    #[error("{0}")]
    Analysis(String),
    #[error("{0}")]
    Measurement(String),
    #[error("{0}")]
    Calibration(String),
    #[error("{0}")]
    Sift(String),
    #[error("{0}")]
    Estimation(String),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Model(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Encoding(_) => "encoding",
            Error::Analysis(_) => "analysis",
            Error::Measurement(_) => "measurement",
            Error::Calibration(_) => "calibration",
            Error::Sift(_) => "sift",
            Error::Estimation(_) => "estimation",
            Error::Domain(_) => "domain",
            Error::Model(_) => "model",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
