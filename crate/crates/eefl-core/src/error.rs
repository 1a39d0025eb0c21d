//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration violates one of its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Shape or segmentation mismatch in model arithmetic.
    #[error("model error: {0}")]
    Model(String),

    /// Invalid input to a loss function.
    #[error("loss error: {0}")]
    Loss(String),

    /// The CTC target cannot be aligned to the given number of frames.
    #[error(
        "infeasible CTC target: {target_len} tokens ({repeats} adjacent repeats) \
         need at least {required} frames, got {frames}"
    )]
    CtcInfeasible {
        frames: usize,
        target_len: usize,
        repeats: usize,
        required: usize,
    },

    /// Aggregation called on inconsistent or empty inputs.
    #[error("aggregation error: {0}")]
    Aggregation(String),

    /// A client update carries non-zero mass outside its declared sub-net.
    #[error("update from client {client_id} violates the zero-out invariant at segment {segment}")]
    UpdateIntegrity { client_id: u64, segment: String },

    /// Training produced a non-finite value.
    #[error("divergence: {0}")]
    Divergence(String),

    /// Malformed or mismatched checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
