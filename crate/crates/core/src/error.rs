use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("level count mismatch: expected {expected}, got {got}")]
    MismatchedLevels { expected: usize, got: usize },

    #[error("norm order must be >= 1, got {0}")]
    InvalidNormOrder(f64),

    #[error("velocity field violates its invariants: {0}")]
    VelocityInvariant(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverNoConvergence { iterations: usize, residual: f64 },

    #[error("incompatible data for the pure-Neumann problem: net source {net:e}")]
    IncompatibleData { net: f64 },

    #[error("Picard iteration did not converge after {iterations} iterations (change {residual:e})")]
    PicardNoConvergence { iterations: usize, residual: f64 },

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run failed at t = {time}: {source}")]
    RunFailed {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_runtime(&self) -> bool {
        match self {
            Error::SolverNoConvergence { .. } | Error::PicardNoConvergence { .. } => true,
            Error::StepFailed { source, .. } | Error::RunFailed { source, .. } => {
                source.is_runtime()
            }
            _ => false,
        }
    }
}
