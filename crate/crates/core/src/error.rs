use std::path::PathBuf;

/// Errors raised by the localization engine and its tooling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported or corrupt image file {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("camera footprint leaves the world extent")]
    OutOfWorld,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("nearest-neighbor index is empty")]
    EmptyIndex,
    #[error("descriptor kind mismatch: {0}")]
    KindMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("map file version mismatch: {0}")]
    VersionMismatch(String),
    #[error("map fingerprint {found:016x} does not match the session config {expected:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error("vote histogram is empty")]
    EmptyHistogram,
    #[error("reference map contains no features")]
    MapEmpty,
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("need at least 2 matches, got {0}")]
    TooFewMatches(usize),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no evaluation records: {0}")]
    EmptyRecords(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error: {0}")]
    Parse(String),
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
