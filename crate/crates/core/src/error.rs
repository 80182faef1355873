use thiserror::Error;

/// Errors raised by the geometry, integrators, solvers and scenario driver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("points are (nearly) antipodal: n·m = {dot}")]
    AntipodalPoints { dot: f64 },

    #[error("inconsistent jet: {0}")]
    InconsistentJet(String),

    #[error("potential gradient is singular at u = n·c = {u}")]
    GradientSingularity { u: f64 },

    #[error("integration would take {steps} steps (limit {limit})")]
    StepCountOverflow { steps: u64, limit: u64 },

    #[error("step {step} cannot be lifted with the requested momentum")]
    NonliftableStep { step: usize },

    #[error("increment {index} leaves the Cayley chart (rotation angle {angle})")]
    ChartOverflow { index: usize, angle: f64 },

    #[error("horizon problem infeasible at step {step}: {reason}")]
    HorizonInfeasible { step: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },
}

impl Error {
    /// Attaches a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with all context layers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
