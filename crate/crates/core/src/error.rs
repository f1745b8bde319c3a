use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the reprogramming pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("parse error at line {line}: cannot parse {token:?} as a number")]
    Parse { line: usize, token: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward called on a graph without a recorded forward pass")]
    NotRecorded,

    #[error("gradient check invalid: loss is not deterministic ({first} vs {second})")]
    CheckInvalid { first: f64, second: f64 },

    #[error("parameter set is frozen and cannot be updated")]
    Frozen,

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported container version {0} (expected 1)")]
    UnsupportedVersion(u32),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("replicas do not fit: d_T={d_t} exceeds floor(d_S/m)={interval} (max feasible m is {max_m})")]
    Placement {
        d_t: usize,
        interval: usize,
        max_m: usize,
    },

    #[error("label mapping error: {0}")]
    Mapping(String),

    #[error("exact W1 oracle supports at most {max} points per cloud, got {n}")]
    OracleSize { n: usize, max: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
