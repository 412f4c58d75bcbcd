use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes or lengths that do not line up (state vs. model, policy vs. window, ...).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A value outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The integrator produced a non-finite or strongly negative state.
    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    /// A matrix factorization or similar numerical step broke down.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// No start point or individual produced a usable result.
    #[error("optimization failed: {0}")]
    Optimization(String),

    /// One scenario of an evaluation could not be simulated.
    #[error("scenario {scenario} failed: {source}")]
    Scenario {
        scenario: usize,
        #[source]
        source: Box<Error>,
    },

    /// The genetic algorithm never produced a feasible policy.
    #[error("no feasible policy found (best violation {best_violation})")]
    Infeasible { best_violation: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
