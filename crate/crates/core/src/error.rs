use thiserror::Error;

/// Errors produced anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("row {row} cannot be classified: {reason}")]
    Classification { row: usize, reason: String },

    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Divergence { iteration: usize, loss: f64 },

    #[error("undefined input: {0}")]
    UndefinedInput(String),

    #[error("problem too large for exact method: {0}")]
    Size(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable name of the variant, used in CSV error logs.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::UnsupportedRegime(_) => "unsupported_regime",
            Error::Classification { .. } => "classification",
            Error::Divergence { .. } => "divergence",
            Error::UndefinedInput(_) => "undefined_input",
            Error::Size(_) => "size",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    /// Whether the error stems from numerics rather than bad usage.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::Domain(_) | Error::Classification { .. } | Error::UndefinedInput(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
