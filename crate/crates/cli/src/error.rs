use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("assertion failed: {0}")]
    Assertion(String),

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 0 success, 2 config, 3 assertion, 4 numerical abort. I/O problems are
    /// almost always a bad `--out` or config path, so they share code 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io(_) => 2,
            Self::Assertion(_) => 3,
            Self::Numerical(_) => 4,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }
}

impl From<accbo_core::Error> for CliError {
    fn from(e: accbo_core::Error) -> Self {
        match e {
            accbo_core::Error::NonFinite { .. } => Self::Numerical(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
