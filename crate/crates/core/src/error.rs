use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Each variant maps onto one of the stable CLI exit codes through
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid mask: row {row} has no unmasked entry")]
    InvalidMask { row: usize },
    #[error("loss has no contributing positions (all targets ignored)")]
    EmptyLoss,
    #[error("sequence length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },
    #[error("lookup failed: {0}")]
    Lookup(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("duplicate parameter id `{0}`")]
    DuplicateParameter(String),
    #[error("non-reproducible function: {0}")]
    Reproducibility(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Exit code contract: 0 success, 2 usage, 3 configuration/data,
    /// 4 runtime numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Lookup(_) => 2,
            Error::Config(_)
            | Error::Format(_)
            | Error::Io { .. }
            | Error::EmptyInput(_)
            | Error::Refused(_)
            | Error::DuplicateParameter(_) => 3,
            Error::Dimension { .. }
            | Error::InvalidMask { .. }
            | Error::EmptyLoss
            | Error::Length { .. }
            | Error::Reproducibility(_)
            | Error::Numerical(_) => 4,
        }
    }
}
