use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library. Each variant belongs to one module so the
/// CLI can report where a failure came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input matrix is not Hermitian (max asymmetry {max_asymmetry:.3e})")]
    NotHermitian { max_asymmetry: f64 },

    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:.3e})")]
    NotConverged { sweeps: usize, off_norm: f64 },

    #[error("operation requires S = I = 1/2 (got S = {s}, I = {i})")]
    UnsupportedSpin { s: String, i: String },

    #[error("degenerate levels: {0}")]
    Degenerate(String),

    #[error("invalid transition: {0}")]
    InvalidTransition(String),

    #[error("level tracking failed: {0}")]
    Tracking(String),

    #[error("singular closed form: {0}")]
    Singular(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no measurable decay (fitted slope {slope:.3e} is not negative)")]
    NoDecay { slope: f64 },

    #[error("fit did not converge: {0}")]
    FitFailed(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Name of the module the error originates from.
    pub fn module(&self) -> &'static str {
        match self {
            Error::NotHermitian { .. } | Error::NotConverged { .. } => "eigen",
            Error::UnsupportedSpin { .. } | Error::InvalidTransition(_) => "hamiltonian",
            Error::Degenerate(_) | Error::Tracking(_) | Error::Singular(_) => "sensitivity",
            Error::NoDecay { .. } | Error::FitFailed(_) => "echo",
            Error::InvalidInput(_) => "input",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }
}
