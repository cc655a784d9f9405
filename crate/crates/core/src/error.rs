use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline, from tensor shape checks to
/// run-directory I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} elements")]
    Shape { shape: Vec<usize>, len: usize },

    #[error("index error in {op}: row {row} has label {label}, expected < {bound}")]
    Index {
        op: &'static str,
        row: usize,
        label: usize,
        bound: usize,
    },

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("corrupt file at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error("train/test leakage: {0}")]
    Leakage(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
