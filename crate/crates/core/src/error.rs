use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("trajectory length {0} ≠ 16")]
    TrajectoryLength(usize),
    #[error("history length {0} ≠ 10")]
    HistoryLength(usize),
    #[error("covariance length {0} ≠ 16")]
    CovarianceLength(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("mode count {0} outside 1..=6")]
    ModeCount(usize),
    #[error("mode probabilities sum to {0}, expected 1")]
    Normalization(f64),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("duplicate agent `{0}`")]
    DuplicateAgent(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("all mode probabilities are zero")]
    ZeroProbability,
    #[error("mode has no covariance parameters and no schedule was given")]
    MissingCovariance,
    #[error("non-positive standard deviation {0}")]
    NonPositiveStd(f64),
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite loss at step {0}")]
    Divergence(usize),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }
}
