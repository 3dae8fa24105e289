use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed {format} header: {reason}")]
    MalformedHeader {
        path: PathBuf,
        format: &'static str,
        reason: String,
    },

    #[error("{path}: unsupported pixel format: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("quantizer step must be >= 1, got {0}")]
    InvalidQStep(u32),

    #[error("q_step list must be nonempty and strictly increasing")]
    InvalidQStepList,

    #[error("vertical fit: x values are all equal")]
    VerticalFit,

    #[error("fit needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("non-decreasing quality model (a = {a:.6} >= 0) from points {points:?}")]
    NonDecreasingQuality { a: f64, points: Vec<(f64, f64)> },

    #[error("lambda must be positive, got {0}")]
    InvalidLambda(f64),

    #[error("qp {qp} outside map domain [{min}, {max}]")]
    QpOutsideDomain { qp: i32, min: i32, max: i32 },

    #[error("qp {qp} out of range [{min}, {max}]")]
    QpOutOfRange { qp: i32, min: i32, max: i32 },

    #[error("LE vector has no entry for q_step {0}")]
    MissingQStep(u32),

    #[error("invalid model set: {0}")]
    InvalidModelSet(String),

    #[error("{path}: {reason}")]
    ModelFile { path: PathBuf, reason: String },

    #[error("target PSNR must be in (0, 100), got {0}")]
    InvalidTarget(f64),

    #[error("encoder process failed (exit {code:?}): {tail}")]
    ProcessFailed { code: Option<i32>, tail: String },

    #[error("encoder process timed out after {0} s")]
    ProcessTimeout(u64),

    #[error("encoder produced unusable output: {0}")]
    BadEncoderOutput(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("all {0} sweep jobs failed")]
    SweepFailed(usize),

    #[error("records file {path}: bad row {line}: {reason}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
