use std::fmt;

/// Failure categories, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or inconsistent configuration.
    Usage(String),
    /// Unreadable or malformed input files.
    Data(String),
    /// Numerical divergence or a failed check.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<protembed::Error> for CliError {
    fn from(e: protembed::Error) -> Self {
        use protembed::Error as E;
        match e {
            E::Config(_) => CliError::Usage(e.to_string()),
            E::NonFinite(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches a path to an I/O failure.
pub fn io_context<T>(r: std::io::Result<T>, path: &std::path::Path) -> CliResult<T> {
    r.map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
