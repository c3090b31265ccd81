use thiserror::Error;

/// Errors raised by tensor algebra, degradation synthesis, the network and I/O.
///
/// The variants map onto the CLI exit-code contract: `Argument`, `Dimension`
/// and `Format` are precondition failures (exit 2), `State` is a
/// checkpoint/config compatibility failure (exit 3) and `Numeric`/`Contract`
/// are runtime numeric failures (exit 4).
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Tensor or image extents do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An operation produced or received a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// An API contract was violated (e.g. backward from a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Incompatible persisted state, e.g. a checkpoint that does not match
    /// the configured network.
    #[error("incompatible state: {0}")]
    State(String),

    /// A container or image file could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Dimension(_) | Error::Format(_) | Error::Io(_) => 2,
            Error::State(_) => 3,
            Error::Numeric(_) | Error::Contract(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
