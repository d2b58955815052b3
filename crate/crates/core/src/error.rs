use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the response engine and its drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("orbit diverged at step {step}: non-finite state")]
    DivergedOrbit { step: usize },

    #[error("degenerate unstable frame at step {step}: |R_ii| = {value:e}")]
    DegenerateFrame { step: usize, value: f64 },

    #[error("stable/unstable tangency at step {step}: condition number {condition:e}")]
    Tangency { step: usize, condition: f64 },

    #[error("shadowing solver failed: residual {residual:e} at step {step}")]
    SolverFailure { step: usize, residual: f64 },

    #[error("singular Jacobian at step {step}")]
    SingularJacobian { step: usize },

    #[error("model does not provide {0}")]
    Capability(&'static str),

    #[error("null response: every coefficient is zero")]
    NullResponse,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Io { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
