use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// No PDP sample exceeded the detection threshold (a missed detection).
    #[error("no signal component above the detection threshold")]
    NoSignalDetected,

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("overlap metric undefined: class means are equal")]
    UndefinedOverlap,

    #[error("correlation undefined: zero variance")]
    UndefinedCorrelation,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid synthetic profile: {0}")]
    InvalidProfile(String),

    #[error("duplicate record_id `{0}` in manifest")]
    DuplicateRecordId(String),

    #[error("record `{record_id}`: file {path} does not exist")]
    MissingFile { record_id: String, path: PathBuf },

    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    /// Every record was a missed detection at the configured threshold.
    #[error("all {0} records were missed detections")]
    AllMissed(usize),

    /// The ranging model could not be fitted to the labeled features.
    #[error("model fit failed: {0}")]
    FitFailed(#[source] Box<Error>),

    #[error("record `{record_id}`: {source}")]
    Record {
        record_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_record(self, record_id: &str) -> Self {
        Error::Record {
            record_id: record_id.to_owned(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping record annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Record { source, .. } => source.root(),
            other => other,
        }
    }

    /// True when the root cause is bad user input (files, manifests, arguments).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self.root(),
            Error::InvalidInput(_)
                | Error::DuplicateRecordId(_)
                | Error::MissingFile { .. }
                | Error::Malformed { .. }
                | Error::InvalidProfile(_)
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
