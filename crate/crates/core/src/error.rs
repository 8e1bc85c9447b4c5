use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Column-role mapping or configuration does not match the data.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell could not be parsed or is missing.
    #[error("data error at row {row}, column '{column}': {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape error: expected {expected} columns, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Propensity scores fall outside the admissible range.
    #[error("positivity error: {0}")]
    Positivity(String),

    /// A matching cell has no donors.
    #[error("support error: {0}")]
    Support(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("in fold {fold}, candidate '{candidate}': {source}")]
    Fold {
        fold: usize,
        candidate: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(#[from] toml::de::Error),
}

impl Error {
    /// Broad category used by front-ends to pick an exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Schema(_) | Error::Parameter(_) | Error::Usage(_) | Error::Config(_) => {
                ErrorKind::Config
            }
            Error::Data { .. } | Error::Invalid(_) | Error::Io(_) | Error::Csv(_) => ErrorKind::Data,
            Error::Numeric(_) | Error::Shape { .. } | Error::Positivity(_) | Error::Support(_) => {
                ErrorKind::Numeric
            }
            Error::Fold { source, .. } => source.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}
