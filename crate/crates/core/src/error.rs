use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad input shapes, unknown tensor names, invalid hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A forward pass produced a non-finite value. `layer` is counted from
    /// the output (0 = output-nearest).
    #[error("non-finite value produced at layer {layer}")]
    NumericOverflow { layer: usize },

    #[error("step {step} diverged: {reason}")]
    Diverged { step: u64, reason: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
