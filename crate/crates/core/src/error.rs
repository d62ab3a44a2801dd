use thiserror::Error;

/// Errors raised by the numerical engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoilError {
    #[error("mode count mismatch: expected {expected}, got {got}")]
    ModeMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("Fock cutoff {cutoff} insufficient: {detail}")]
    CutoffTooSmall { cutoff: usize, detail: String },

    #[error("no herald: the heralding probability vanishes")]
    NoHerald,

    #[error("empty acceptance window")]
    EmptyWindow,

    #[error("convergence check `{check}` failed: {detail}")]
    NotConverged { check: &'static str, detail: String },

    #[error("missing channel `{0}`")]
    MissingChannel(String),
}

pub type Result<T> = std::result::Result<T, RecoilError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> RecoilError {
    RecoilError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
