use thiserror::Error;

/// Errors raised by the numerical kernels, norms and optimizers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The operation is undefined at this input (zero matrix, all-zero tree, ...).
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("non-finite value encountered during polar iteration {iteration}")]
    NumericInstability { iteration: usize },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("svd oracle is limited to 16x16 matrices, got {rows}x{cols}")]
    OracleScope { rows: usize, cols: usize },

    #[error("invalid norm: {0}")]
    InvalidNorm(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
