use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IrtError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A Pearson correlation was requested on a zero-variance series.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// The data left after cleaning or exclusion is too small to work with.
    #[error("refused: {0}")]
    Refusal(String),

    /// The likelihood stopped being finite during estimation.
    #[error("non-finite log-likelihood at person {person} ({person_id}), item {item} ({item_id})")]
    NumericFailure {
        person: usize,
        item: usize,
        person_id: String,
        item_id: String,
    },

    /// Input file is not a valid response matrix. Line and column are 1-based.
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for IrtError {
    fn from(e: std::io::Error) -> Self {
        IrtError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, IrtError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(IrtError::Domain(msg.into()))
}
