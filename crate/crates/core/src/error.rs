use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A malformed or invalid row in an input file.
    #[error("{}: line {line}: {msg}", path.display())]
    Row { path: PathBuf, line: u64, msg: String },

    /// Input data that is structurally fine but violates a model constraint.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// An unsupported combination of options, or a bound family that needs
    /// summaries which were not computed.
    #[error("configuration error: {0}")]
    Config(String),

    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite importance weight, failed inversion and similar.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad inputs or options rather than by the
    /// numerics or the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Row { .. } | Error::Invalid(_) | Error::Config(_) | Error::Domain(_)
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
