use thiserror::Error;

use crate::model::{ItemId, UserId};

pub type Result<T> = std::result::Result<T, KmError>;

#[derive(Debug, Error)]
pub enum KmError {
    #[error("unknown user id {0}")]
    UnknownUser(UserId),
    #[error("unknown item id {0}")]
    UnknownItem(ItemId),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty vector")]
    EmptyVector,
    #[error("invalid PMF vector: {0}")]
    InvalidPmf(String),
    #[error("invalid indicator vector: {0}")]
    InvalidIndicator(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension {dim} exceeds the exhaustive-search limit of {max}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("{kind} {id} has no observations")]
    NoObservations { kind: &'static str, id: u64 },
    #[error("observation set is empty")]
    EmptyObservations,
    #[error("invalid probability {p} for (user {user}, item {item})")]
    InvalidProbability { user: UserId, item: ItemId, p: f64 },
    #[error("duplicate observation for (user {user}, item {item})")]
    DuplicatePair { user: UserId, item: ItemId },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: rating {rating} outside [1, {r_max}]")]
    RatingOutOfRange { line: usize, rating: i64, r_max: u32 },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl KmError {
    /// Process exit status: 1 configuration, 2 input or I/O, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            KmError::InvalidConfig(_) | KmError::DimensionTooLarge { .. } => 1,
            KmError::Numerical(_) | KmError::NotSymmetric(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn dim(expected: usize, found: usize) -> Self {
        KmError::DimensionMismatch { expected, found }
    }
}
