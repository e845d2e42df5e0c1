//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed XML at byte offset {offset}: {message}")]
    Xml { offset: u64, message: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus format error: {0}")]
    CorpusFormat(String),

    #[error("corpus format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("no trainable vocabulary")]
    NoTrainableVocabulary,

    #[error("embedding file error at line {line}: {message}")]
    EmbeddingFormat { line: usize, message: String },

    #[error("word not in vocabulary: {0}")]
    UnknownWord(String),

    #[error("empty vocabulary intersection with dictionary")]
    EmptyVocabularyIntersection,

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid cluster count k={k} for {n} points")]
    InvalidClusterCount { k: usize, n: usize },

    #[error("non-finite value in input data")]
    NonFiniteInput,

    #[error("silhouette requires at least two clusters")]
    SingleCluster,

    #[error("vote matrix has no nonzero entry")]
    EmptyVoteMatrix,

    #[error("factorization rank {rank} out of range for a {rows}x{cols} matrix")]
    RankOutOfRange { rank: usize, rows: usize, cols: usize },

    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),

    #[error("query has no in-vocabulary terms")]
    EmptyQuery,

    #[error("domain {0} has no questions")]
    EmptyDomain(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
