use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<m3_core::Error> for CliError {
    fn from(e: m3_core::Error) -> Self {
        use m3_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Parameter(_) => CliError::Config(e.to_string()),
            E::Numerical(m) => CliError::Numerical(m),
            E::Io(_) | E::Format(_) | E::Dimension(_) | E::EmptyScene | E::ZeroNormRow { .. } => {
                CliError::Data(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub(crate) fn data_err(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}
