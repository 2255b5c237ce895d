use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("state diverged (non-finite) at step {step}")]
    Diverged { step: u64 },

    #[error("trial {trial}: {source}")]
    Trial {
        trial: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("step budget exceeded: {steps} steps requested, limit {limit}")]
    Budget { steps: f64, limit: f64 },

    #[error("matrix is not Hurwitz")]
    NotHurwitz,

    #[error("ill-posed Lyapunov equation: singular Kronecker system")]
    IllPosed,

    #[error("matrix is not positive semi-definite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("matrix is not positive definite (eigenvalue {0:e})")]
    NotPd(f64),

    #[error("no usable data: {0}")]
    NoData(String),

    #[error("sets overlap at {0}")]
    Overlap(String),

    #[error("no multistart run converged ({starts} starts, best constraint violation {best_violation:e})")]
    NoConvergence { starts: usize, best_violation: f64 },

    #[error("marginal integral underflowed; evaluate on a log-sum-exp grid or increase epsilon")]
    Underflow,

    #[error("integrand does not decay in the unresolved directions: {0}")]
    NotConfining(String),

    #[error("degenerate projection: {0}")]
    DegenerateProjection(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
