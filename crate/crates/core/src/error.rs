use crate::mdp::StateId;

/// Errors raised by the planner, its oracles, and the file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} features but {right} targets")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("feature norm {norm} exceeds the unit ball")]
    FeatureNorm { norm: f64 },

    #[error("gram matrix does not match the supplied design (max deviation {deviation:e})")]
    GramMismatch { deviation: f64 },

    /// A simulator was queried at a state it has never returned. This is a
    /// planner bug, never a recoverable condition.
    #[error("local access violation: state {state} was never observed")]
    LocalAccessViolation { state: StateId },

    /// The core set outgrew the eluder-style size cap.
    #[error("core set size {size} reached the bound C_max = {c_max:.4}")]
    BoundViolation { size: usize, c_max: f64 },

    #[error("unknown state {state}")]
    UnknownState { state: StateId },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing required key `{key}`")]
    MissingKey { key: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
