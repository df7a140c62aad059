use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MexError {
    #[error(transparent)]
    Core(#[from] mexkit_core::Error),

    #[error("budget exhausted: {requested} new queries requested, {remaining} remaining")]
    BudgetExhausted { requested: usize, remaining: usize },

    #[error("input {index} rejected: {reason}")]
    InvalidInput { index: usize, reason: String },

    #[error("no victim model loaded")]
    ModelNotLoaded,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    SchemaViolation {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("unknown report format '{0}' (expected json, csv or table)")]
    UnknownFormat(String),

    #[error("nothing to report")]
    EmptyReport,

    #[error("transport: {0}")]
    Transport(String),

    #[error("unauthorized: unknown API key")]
    Unauthorized,

    #[error("rate limited, retry after {retry_after:.3}s")]
    RateLimited { retry_after: f64 },

    #[error("cannot bind {addr}: {reason}")]
    BindFailure { addr: String, reason: String },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<MexError>,
    },
}

impl MexError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MexError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_round(self, round: usize) -> Self {
        match self {
            e @ MexError::Round { .. } => e,
            e => MexError::Round {
                round,
                source: Box::new(e),
            },
        }
    }

    /// The error with any round annotation stripped.
    pub fn root(&self) -> &MexError {
        match self {
            MexError::Round { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            MexError::Config(_)
            | MexError::UnknownFormat(_)
            | MexError::SchemaViolation { .. }
            | MexError::Core(
                mexkit_core::Error::InvalidConfig(_)
                | mexkit_core::Error::InvalidPolicy(_)
                | mexkit_core::Error::UnknownOptimizer(_)
                | mexkit_core::Error::UnknownArchitecture(_)
                | mexkit_core::Error::RatioIndivisible { .. },
            ) => 2,
            MexError::BudgetExhausted { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, MexError>;
