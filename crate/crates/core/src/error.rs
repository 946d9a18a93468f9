use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The requested density cannot be realized; `minimum` is the smallest
    /// density that would be accepted for the same network.
    #[error("infeasible density {requested}: {reason} (minimum feasible density {minimum})")]
    InfeasibleDensity {
        requested: f64,
        minimum: f64,
        reason: String,
    },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("incomparable: {0}")]
    Incomparable(String),

    #[error("{path}: row {row}: {msg}")]
    Parse {
        path: String,
        row: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::Incomparable(_)
            | Error::Json(_) => 2,
            Error::InfeasibleDensity { .. } => 3,
            Error::NonConvergence { .. } => 4,
            Error::Dimension(_) | Error::Io(_) => 1,
        }
    }
}
