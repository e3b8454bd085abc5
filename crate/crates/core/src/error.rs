use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure in epoch {epoch}: {detail}")]
    NumericFailure { epoch: usize, detail: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("key generation failed: {0}")]
    KeyGeneration(String),

    #[error("round {round} failed at {}: {source}", node.map(|n| format!("node {n}")).unwrap_or_else(|| "the aggregator".into()))]
    RoundFailure {
        round: usize,
        /// `None` when the failure happened during aggregation.
        node: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error on line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("config error for key `{key}`{}: {detail}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    Config {
        key: String,
        line: Option<usize>,
        detail: String,
    },

    #[error("malformed wire data: {0}")]
    Wire(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }
}
