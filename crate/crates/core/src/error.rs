use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid loss budget: {0}")]
    InvalidBudget(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data{}: need {needed} samples, have {available}", band_label(.band))]
    InsufficientData {
        band: Option<usize>,
        needed: usize,
        available: usize,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

fn band_label(band: &Option<usize>) -> String {
    match band {
        Some(i) => format!(" for band {i}"),
        None => String::new(),
    }
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Whether this error stems from the filesystem rather than from inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
