use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm is below 1e-12 and cannot be normalized")]
    ZeroVector,

    #[error("vector contains a NaN or infinite component")]
    NonFinite,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("mean-shift numerator has norm below 1e-12")]
    DegenerateShift,

    #[error("class index {index} is not in [0, {classes})")]
    BadClassIndex { index: usize, classes: usize },

    #[error("dataset contains no samples")]
    EmptyDataset,

    #[error("centroid of class {0} has norm below 1e-12")]
    DegenerateClass(usize),

    #[error("at least two classes are required, found {0}")]
    TooFewClasses(usize),

    #[error("manifest mismatch in {file}: {detail}")]
    ManifestMismatch { file: String, detail: String },

    #[error("unsupported dataset format version {0}")]
    UnsupportedVersion(u32),

    #[error("label {label} at row {row} is not in [0, {classes})")]
    LabelOutOfRange { row: usize, label: i64, classes: usize },

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV output failed: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the file system rather than by file contents.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
