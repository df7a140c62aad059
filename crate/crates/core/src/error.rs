use alloc::string::String;

/// Errors raised by the pure algorithms in this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid probability vector: {0}")]
    InvalidSimplex(String),
    #[error("invalid response policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("pool exhausted: requested {requested}, only {available} unused items remain")]
    PoolExhausted { requested: usize, available: usize },
    #[error("k-center selection needs at least one existing center")]
    EmptyCenters,
    #[error("k-center selection needs at least one candidate")]
    EmptyCandidates,
    #[error("requested {requested} items from {available} candidates")]
    TooManyRequested { requested: usize, available: usize },
    #[error("adversarial generation needs continuous features in [0,1]; feature {index} is {value}")]
    NonContinuousInput { index: usize, value: f64 },
    #[error("batch of {batch} cannot be split {adversarial}:{clean}")]
    RatioIndivisible {
        batch: usize,
        adversarial: usize,
        clean: usize,
    },
    #[error("training target {index} is not a full probability simplex")]
    DegradedLabels { index: usize },
    #[error("no query-response pairs to train on")]
    EmptyPairs,
    #[error("labeled batch has {labeled} items but unlabeled batch has {unlabeled}")]
    SizeMismatch { labeled: usize, unlabeled: usize },
    #[error("unknown optimizer `{0}`")]
    UnknownOptimizer(String),
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("evaluation set is empty")]
    EmptySet,
    #[error("label space mismatch: expected {expected} classes, found {found}")]
    LabelSpaceMismatch { expected: usize, found: usize },
    #[error("top confidence {confidence} is below 1/{classes}")]
    InconsistentConfidence { confidence: f64, classes: usize },
    #[error("snapshots share no input ids")]
    NoOverlap,
    #[error("class {class} has fewer than 2 items, cannot stratify")]
    TooSmall { class: usize },
    #[error("shape mismatch: expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
