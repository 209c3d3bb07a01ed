use std::fmt;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration, missing input paths.
    Config(String),
    /// Inputs that exist but cannot be used.
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub fn data<E: fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

pub fn config<E: fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

pub fn internal<E: fmt::Display>(e: E) -> CliError {
    CliError::Internal(e.to_string())
}

impl From<gma_neural::NeuralError> for CliError {
    fn from(e: gma_neural::NeuralError) -> Self {
        use gma_neural::NeuralError as N;
        match e {
            N::InvalidSpec(_) | N::InvalidConfig(_) => CliError::Config(e.to_string()),
            N::Io(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<gma_study::StudyError> for CliError {
    fn from(e: gma_study::StudyError) -> Self {
        use gma_study::StudyError as S;
        match e {
            S::Io(_) => CliError::Internal(e.to_string()),
            S::InvalidRequest(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
