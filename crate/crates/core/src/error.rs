use std::io;

use thiserror::Error;

pub type Result<T, E = KhiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KhiError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid interval on attribute {attr}: lower bound {lo} exceeds upper bound {hi}")]
    InvalidInterval { attr: usize, lo: f64, hi: f64 },

    #[error("invalid predicate: {0}")]
    InvalidPredicate(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("object {0} not found")]
    NotFound(u32),

    #[error("greedy search needs at least one entry point")]
    EmptyEntrySet,

    #[error("predicate generation failed for attributes {attributes:?} after {retries} retries")]
    GenerationFailed { attributes: Vec<usize>, retries: usize },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("bad magic {found:?}, expected \"KHI1\"")]
    MagicMismatch { found: [u8; 4] },

    #[error("unsupported index format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("index header disagrees with dataset: {0}")]
    DatasetMismatch(String),

    #[error("node {node} lists neighbor {neighbor} outside its object set")]
    DanglingNeighbor { node: u32, neighbor: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),
}
