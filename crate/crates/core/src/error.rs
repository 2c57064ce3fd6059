use thiserror::Error;

/// Errors raised across the library.
///
/// The CLI maps [`Error::Config`] and [`Error::OutsideDomain`] to exit code 2
/// and the solver failures to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("point ({x}, {y}) is not above the graph (phi(x) = {phi})")]
    OutsideDomain { x: f64, y: f64, phi: f64 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("operator accuracy error: {0}")]
    OperatorAccuracy(String),

    #[error("contraction failure: Neumann series diverged, estimated ||S E|| = {estimate:.4}")]
    ContractionFailure { estimate: f64 },

    #[error(
        "boundary fit failed after {iterations} iterations (relative residual {residual:.3e})"
    )]
    BoundaryFitFailure { iterations: usize, residual: f64 },

    #[error("fixed-point iteration did not converge in {iterations} outer iterations (last change {last_change:.3e})")]
    FixedPointFailure { iterations: usize, last_change: f64 },

    #[error("degenerate ellipticity: |mu| = {0} >= 1")]
    DegenerateEllipticity(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that originate in the numerical solve rather than in
    /// the inputs.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::ContractionFailure { .. }
                | Error::BoundaryFitFailure { .. }
                | Error::FixedPointFailure { .. }
                | Error::OperatorAccuracy(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
