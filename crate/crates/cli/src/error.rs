use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Numerical(#[from] homest::Error),

    #[error("study flagged: {0}")]
    Flagged(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(homest::Error::InvalidArgument(_)) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
            CliError::Flagged(_) => 4,
        }
    }
}
