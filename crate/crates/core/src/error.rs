use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate instance after {attempts} attempts")]
    Degenerate { attempts: usize },
    #[error("bisection did not converge for pair {pair} (residual {residual:e})")]
    Bisection { pair: usize, residual: f64 },
    #[error("mse underflow at pair {pair}, channel {channel}")]
    MseUnderflow { pair: usize, channel: usize },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("training failed at epoch {epoch}, sample {sample}: {detail}")]
    Training {
        epoch: usize,
        sample: usize,
        detail: String,
    },
    #[error("instance {index}: {source}")]
    Instance {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn at_instance(self, index: usize) -> Self {
        Error::Instance {
            index,
            source: Box::new(self),
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::NonFinite(_) => "non-finite",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Degenerate { .. } => "degenerate",
            Error::Bisection { .. } => "bisection",
            Error::MseUnderflow { .. } => "mse-underflow",
            Error::Format(_) => "format",
            Error::Version { .. } => "version",
            Error::Training { .. } => "training",
            Error::Instance { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Index of the failing instance, if the error was attributed to one.
    pub fn instance(&self) -> Option<usize> {
        match self {
            Error::Instance { index, .. } => Some(*index),
            _ => None,
        }
    }
}
