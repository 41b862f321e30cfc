use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("no sentences")]
    NoSentences,

    #[error("no tokens")]
    NoTokens,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric fault in {op}: non-finite value produced")]
    NumericFault { op: &'static str },

    #[error("underdetermined: {rows} paired rows for dimension {dim}")]
    Underdetermined { rows: usize, dim: usize },

    #[error("sequence length {len} exceeds configured maximum {max}")]
    TooLong { len: usize, max: usize },

    #[error("dataset has no language ids")]
    MissingLangIds,

    #[error("zero vector in {0}")]
    ZeroVector(&'static str),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("ensemble member {index} failed: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
