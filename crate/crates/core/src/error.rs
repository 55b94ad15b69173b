//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building, solving or simulating a game.
#[derive(Debug, Error)]
pub enum Error {
    /// The requested time grid is not usable.
    #[error("invalid time grid: {0}")]
    Grid(String),

    /// Matrix shapes do not fit together.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix that must be inverted is singular.
    #[error("matrix `{0}` is singular")]
    Singular(String),

    /// A forward march produced a NaN or infinite state.
    #[error("non-finite state at node {node} (t = {time})")]
    NonFinite { node: usize, time: f64 },

    /// An ODE solution exceeded the blow-up threshold or became non-finite.
    #[error("{system} at t = {time}")]
    BlowUp { system: String, time: f64 },

    /// A configuration file could not be parsed.
    #[error("config line {line}, key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    /// A caller supplied an argument outside the admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A required input is missing.
    #[error("missing input: {0}")]
    Missing(String),
}
