use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, left is {}x{}, right is {}x{}", .lhs.0, .lhs.1, .rhs.0, .rhs.1)]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("matrix data has {actual} elements, {rows}x{cols} needs {}", .rows * .cols)]
    DataLength {
        rows: usize,
        cols: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot read corpus {path}: {source}")]
    CorpusIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus has {len} bytes, at least {min} are required")]
    CorpusTooSmall { len: usize, min: usize },

    #[error("{split} split has {len} bytes, at least {required} are required")]
    SplitTooShort {
        split: &'static str,
        len: usize,
        required: usize,
    },

    #[error("window would cross the end of the lane sequence; resample needed")]
    ResampleNeeded,

    #[error("step cache is incomplete: {0}")]
    IncompleteCache(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("character count must be positive")]
    ZeroCount,

    #[error("checkpoint i/o on {path}: {source}")]
    CheckpointIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint shape {found} does not match requested shape {expected}")]
    CheckpointShape { found: String, expected: String },

    #[error("metrics i/o: {0}")]
    Metrics(#[from] std::io::Error),
}
