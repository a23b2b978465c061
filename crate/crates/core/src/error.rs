use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },

    #[error("invalid JSON")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown column `{column}` in table `{table}`")]
    UnknownColumn { table: String, column: String },

    #[error("table `{table}`, row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Coercion {
        table: String,
        row: usize,
        column: String,
        value: String,
    },

    #[error("table `{table}`, row {row}: missing value in column `{column}`")]
    MissingValue {
        table: String,
        row: usize,
        column: String,
    },

    #[error("table `{table}`: duplicate primary key `{key}`")]
    DuplicateKey { table: String, key: String },

    #[error("table `{table}`, row {row}: foreign key `{key}` has no matching parent")]
    OrphanKey {
        table: String,
        row: usize,
        key: String,
    },

    #[error("column `{column}`: category `{value}` is not among the known categories")]
    UnknownCategory { column: String, value: String },

    #[error("cluster `{cluster}` has inconsistent values in parent column `{column}`")]
    Inconsistent { cluster: String, column: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("model fit failed: {0}")]
    Fit(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    /// True for failures that come from the data themselves rather than the
    /// caller (validation and structural problems).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Fit(_) | Error::Io { .. } | Error::Degenerate(_))
    }
}
