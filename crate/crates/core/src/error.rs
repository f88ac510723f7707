use std::path::PathBuf;

/// Errors raised by the engine.
///
/// The variants are grouped by who is at fault: `Contract` and `Config` are
/// caller mistakes, `Data`, `Format` and `Io` come from inputs on disk.
#[derive(Debug, thiserror::Error)]
pub enum UbpError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("gradient oracle failure: {0}")]
    Oracle(String),
    #[error("not ready: {0}")]
    NotReady(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl UbpError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UbpError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for data/IO problems, 2 for
    /// configuration and contract problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            UbpError::Data(_) | UbpError::Format(_) | UbpError::Io { .. } => 1,
            UbpError::Contract(_)
            | UbpError::Config(_)
            | UbpError::Degenerate(_)
            | UbpError::NotReady(_)
            | UbpError::Oracle(_) => 2,
        }
    }
}

pub type Result<T, E = UbpError> = std::result::Result<T, E>;

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::UbpError::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
