use thiserror::Error;

/// Errors produced by codebook construction, configuration loading, the
/// channel model, and the decoder.
#[derive(Debug, Error)]
pub enum Error {
    /// A Hadamard order that is not a power of two (or is zero).
    #[error("invalid Hadamard order {0}: must be a power of two >= 1")]
    InvalidOrder(usize),

    /// More nodes requested than the codebook can carry.
    #[error("cannot assign {requested} nodes: capacity is {capacity} (order {order})")]
    Capacity {
        requested: usize,
        capacity: usize,
        order: usize,
    },

    /// A configuration value (or combination) that fails validation.
    #[error("config: {0}")]
    Config(String),

    /// Waveforms that cannot be combined on one wire.
    #[error("alignment: {0}")]
    Alignment(String),

    /// Too little signal per chip for the decoder to work with.
    #[error("resolution: {0}")]
    Resolution(String),

    /// Malformed input file content.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
