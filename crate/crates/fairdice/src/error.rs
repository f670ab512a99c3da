//! Error type shared across the library.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum FairdiceError {
    /// An argument was outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two inputs that must agree in length or shape did not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value failed validation.
    #[error("invalid config: {0}")]
    Config(String),

    /// An optimisation run produced a non-finite quantity.
    #[error("numerical failure at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },

    /// A forward pass produced a non-finite value in the given layer.
    #[error("non-finite activation in layer {layer}")]
    NonFiniteLayer { layer: usize },

    /// Environment construction could not satisfy its invariants.
    #[error("environment construction failed: {0}")]
    EnvConstruction(String),

    /// A dataset or artifact file could not be read or parsed.
    #[error("data error: {0}")]
    Data(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialisation failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, FairdiceError>;

impl FairdiceError {
    /// Shorthand for a [`FairdiceError::Domain`] with a formatted message.
    pub fn domain(msg: impl Into<String>) -> Self {
        FairdiceError::Domain(msg.into())
    }

    /// Shorthand for a [`FairdiceError::Shape`] with a formatted message.
    pub fn shape(msg: impl Into<String>) -> Self {
        FairdiceError::Shape(msg.into())
    }

    /// Shorthand for a [`FairdiceError::Config`] with a formatted message.
    pub fn config(msg: impl Into<String>) -> Self {
        FairdiceError::Config(msg.into())
    }

    /// Shorthand for a [`FairdiceError::Data`] with a formatted message.
    pub fn data(msg: impl Into<String>) -> Self {
        FairdiceError::Data(msg.into())
    }
}
