use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("vector norm is too small to normalize")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid dimension {0}")]
    InvalidDimension(usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("batch of {0} rows is too small for batch statistics (need at least 2)")]
    BatchTooSmall(usize),
    #[error("forward cache does not match parameters or gradient shape")]
    CacheMismatch,
    #[error("gradient shape does not match parameters")]
    ShapeMismatch,
    #[error("need at least 2 identities, found {0}")]
    InsufficientIdentities(usize),
    #[error("identity {0} lacks a masked/unmasked record pair")]
    MissingPairForIdentity(u32),
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("invalid synthetic dataset spec: {0}")]
    InvalidSpec(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("score set has an empty genuine or imposter population")]
    EmptyScores,
    #[error("genuine and imposter scores both have zero variance")]
    DegenerateDistributions,
    #[error("dataset has no masked records")]
    MissingMaskedRecords,
    #[error("reference or probe set is empty")]
    EmptySet,
}
