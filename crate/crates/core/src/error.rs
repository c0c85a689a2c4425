use thiserror::Error;

use crate::linalg::LinearSolveReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("solver failure: {message}")]
    Solver {
        message: String,
        report: Option<LinearSolveReport>,
    },

    #[error("numerical consistency failure: {0}")]
    Numerical(String),

    #[error("placement failure: {0}")]
    Placement(String),

    #[error("config error at {}: {message}", location(.key, .line))]
    Config {
        key: String,
        line: Option<usize>,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn location(key: &str, line: &Option<usize>) -> String {
    match line {
        Some(l) => format!("key `{key}` (line {l})"),
        None => format!("key `{key}`"),
    }
}

/// Coarse failure category, used for CLI exit codes and one-line error output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Solver,
    Placement,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Solver => 3,
            ErrorCategory::Placement => 4,
            ErrorCategory::Io => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Solver => "solver",
            ErrorCategory::Placement => "placement",
            ErrorCategory::Io => "io",
        }
    }
}

impl Error {
    pub fn config(key: impl Into<String>, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            line,
            message: message.into(),
        }
    }

    pub fn solver(message: impl Into<String>, report: Option<LinearSolveReport>) -> Self {
        Error::Solver {
            message: message.into(),
            report,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config { .. } | Error::InvalidInput(_) | Error::Structural(_) => {
                ErrorCategory::Config
            }
            Error::DimensionMismatch { .. } => ErrorCategory::Config,
            Error::Solver { .. } | Error::Numerical(_) => ErrorCategory::Solver,
            Error::Placement(_) => ErrorCategory::Placement,
            Error::Io(_) => ErrorCategory::Io,
        }
    }
}
