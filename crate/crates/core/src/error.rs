//! Crate-wide error type.
//!
//! Config errors map to CLI exit code 1, everything else to exit code 2.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a dataset integrity rule (non-finite reward, dimension
    /// mismatch between states, empty dataset, ...).
    #[error("data integrity: {0}")]
    DataIntegrity(String),

    /// File does not start with the expected magic bytes.
    #[error("bad file format: {0}")]
    Format(String),

    /// Magic family matched but the version digits differ.
    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    /// File ended before the payload declared in the header.
    #[error("truncated file: {0}")]
    Truncated(String),

    /// Header dimensions do not match the payload or the requesting caller.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Environment produced or received a non-finite state.
    #[error("environment fault: {0}")]
    EnvFault(String),

    /// Network shape error; names the layer and the expected/actual dims.
    #[error("shape mismatch in {layer}: expected {expected}, got {actual}")]
    ShapeMismatch {
        layer: String,
        expected: usize,
        actual: usize,
    },

    /// Backward called without a forward cache, or similar API misuse.
    #[error("state error: {0}")]
    State(String),

    /// Optimizer saw a non-finite gradient; names the parameter.
    #[error("non-finite gradient in parameter `{0}`")]
    NanGradient(String),

    /// Reverse diffusion produced a non-finite intermediate.
    #[error("sampling fault: {0}")]
    SamplingFault(String),

    /// Invalid configuration (bad field, unknown override key, missing path).
    #[error("config error: {0}")]
    Config(String),

    /// Runtime failure during a pipeline run (NaN loss, fault budget exceeded).
    #[error("runtime fault: {0}")]
    Runtime(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code for this error: 1 for configuration problems, 2 for
    /// runtime faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}
