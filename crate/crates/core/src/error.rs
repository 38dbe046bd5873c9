use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("length mismatch: expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("configuration {0:?} is not admissible")]
    Inadmissible(Vec<u32>),

    #[error("resource cap exceeded: {0}")]
    CapExceeded(String),

    #[error("missing coefficient table for N = {0}")]
    MissingTable(usize),

    #[error("cache metadata mismatch: {0}")]
    CacheMetadata(String),

    #[error("cache checksum mismatch (expected {expected}, found {found})")]
    Checksum { expected: String, found: String },

    #[error("malformed cache entry at line {line}: {reason}")]
    MalformedEntry { line: usize, reason: String },

    #[error("cross-check failed: {0}")]
    CrossCheck(String),

    #[error("no activity root in (0, 1]: {0}")]
    NoRoot(String),

    #[error("renewal model is unconverged (tail mass {tail_mass:.3e} > {threshold:.1e}); pass an override to proceed")]
    Unconverged { tail_mass: f64, threshold: f64 },

    #[error("malformed observable: {0}")]
    MalformedObservable(String),

    #[error("unsupported parameters: {0}")]
    Unsupported(String),

    #[error("singular restriction: {0}")]
    Singular(String),

    #[error("eigensolver did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("overflow while evaluating at point {0}")]
    Overflow(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
