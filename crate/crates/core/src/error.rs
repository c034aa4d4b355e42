use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("unsupported manifest version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("activation file {path} holds {found} bytes, header implies {expected}")]
    CountMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("activation file {path} is truncated: {reason}")]
    Truncated { path: PathBuf, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("index {index} out of range for {what} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("neuron {neuron} of {layer} is dead (max activation {a_max})")]
    DeadNeuron {
        layer: String,
        neuron: usize,
        a_max: f64,
    },

    #[error("class selectivity undefined for a single contributing image")]
    SingularClassIndex,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("ontology error: {0}")]
    Ontology(String),

    #[error("architecture file error at line {line}: {reason}")]
    Architecture { line: usize, reason: String },

    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("missing thumbnail {0}")]
    MissingThumbnail(PathBuf),

    #[error("report key `{0}` was not computed")]
    MissingKey(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Csv(_) | Error::MissingThumbnail(_) => 2,
            Error::InvalidArgument(_) | Error::UnknownLayer(_) | Error::MissingKey(_) => 3,
            _ => 1,
        }
    }
}
