use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = OdtError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OdtError {
    #[error("no atomic triples")]
    NoAtomicTriples,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("graph: {0}")]
    Graph(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid triple: {0}")]
    InvalidTriple(Violation),

    #[error("range [{a},{b}]x[{c},{d}]x[{e},{f}] outside index bounds")]
    RangeOutOfBounds {
        a: usize,
        b: usize,
        c: usize,
        d: usize,
        e: usize,
        f: usize,
    },

    /// The brute-force oracle refused an instance above its size guard.
    #[error("instance too large for the oracle: {0}")]
    GuardExceeded(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
