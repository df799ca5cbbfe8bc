use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unbalanced transport problem: supply sums to {supply}, demand sums to {demand}")]
    UnbalancedProblem { supply: f64, demand: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("instance too large for exhaustive enumeration: {rows}x{cols} cells (limit {limit})")]
    TooLarge { rows: usize, cols: usize, limit: usize },

    #[error("vector is not L1-normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("inconsistent statistics: word id {word} has document frequency 0")]
    InconsistentStats { word: usize },

    #[error("cannot normalize a zero vector{}", token.as_ref().map(|t| format!(" (token {t:?})")).unwrap_or_default())]
    ZeroVector { token: Option<String> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("word {0:?} is missing from the embedding store")]
    MissingWord(String),

    #[error("rank deficient: requested {requested} components but only {available} nonzero singular values")]
    RankDeficient { requested: usize, available: usize },

    #[error("{} has no usable words", doc.map(|d| format!("document {d}")).unwrap_or_else(|| "document".into()))]
    EmptySupport { doc: Option<usize> },

    #[error("not enough neighbours: need {needed}, have {available}")]
    NotEnoughNeighbors { needed: usize, available: usize },

    #[error("validation set is empty")]
    EmptyValidation,

    #[error("base method has zero error on dataset(s): {}", .0.join(", "))]
    DivisionByZero(Vec<String>),

    #[error("missing fold file {0}")]
    MissingFoldFile(PathBuf),

    #[error("too few documents: {0}")]
    TooSmall(String),

    #[error("row {0} has no finite neighbour")]
    NoFiniteNeighbor(usize),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
