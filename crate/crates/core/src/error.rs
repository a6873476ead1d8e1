//! Error taxonomy shared by the whole engine.

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad layer stacks, hyperparameters out of range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid runtime input: shape mismatches, out-of-range labels, empty data.
    #[error("input error: {0}")]
    Input(String),

    /// Operation called in the wrong order (e.g. optimizer step before backward).
    #[error("state error: {0}")]
    State(String),

    /// Malformed binary payload; `offset` is the byte position of the problem.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A pruning step emptied a layer entirely; the run cannot continue.
    #[error("layer {layer} fully pruned at iteration {iteration}")]
    DeadLayer { layer: usize, iteration: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
