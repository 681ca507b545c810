use std::fmt;

/// Failure of a CLI invocation; [`CliError::exit_code`] maps it to the
/// process status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or inputs detected before work starts.
    Validation(String),
    /// Anything that fails while a command runs.
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "invalid input: {m}"),
            Self::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Wraps any displayable error as a runtime failure.
pub trait Context<T> {
    fn ctx(self, what: &str) -> Result<T, CliError>;
}

impl<T, E: fmt::Display> Context<T> for Result<T, E> {
    fn ctx(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(format!("{what}: {e}")))
    }
}
