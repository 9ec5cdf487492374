use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants carry enough context (trial ids, field names, op names) that a
/// diagnostic can be printed without the caller re-deriving what went wrong.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("non-finite sample in trial (subject {subject}, session {session}, trial {trial})")]
    NonFiniteSample { subject: u32, session: u32, trial: u32 },

    #[error("unknown label {label:?} in trial (subject {subject}, session {session}, trial {trial})")]
    UnknownLabel {
        label: String,
        subject: u32,
        session: u32,
        trial: u32,
    },

    #[error("duplicate trial id (subject {subject}, session {session}, trial {trial})")]
    DuplicateTrial { subject: u32, session: u32, trial: u32 },

    #[error("sampling rate below Nyquist for configured bands: fs = {fs} Hz, band ceiling = {ceiling} Hz")]
    SamplingRateBelowNyquist { fs: f64, ceiling: f64 },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("invalid band [{low}, {high}] Hz at fs = {fs} Hz")]
    InvalidBand { low: f64, high: f64, fs: f64 },

    #[error("series too short: {len} samples, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },

    #[error("trial shorter than one temporal block: {samples} samples, need {needed}")]
    TrialTooShort { samples: usize, needed: usize },

    #[error("layout error: {0}")]
    Layout(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("template error: {0}")]
    Template(String),

    #[error("text bank error: {0}")]
    TextBank(String),

    #[error("invalid target index {index} for {classes} classes")]
    InvalidTarget { index: usize, classes: usize },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("{0} out of range")]
    OutOfRange(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("split error: {0}")]
    Split(String),

    #[error("insufficient samples for class {label:?}: need {needed}, have {available}")]
    InsufficientSamples {
        label: String,
        needed: usize,
        available: usize,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
