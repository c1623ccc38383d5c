use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transform argument outside its domain: Re(s) = {0} < 0")]
    Domain(f64),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("moment of order {order} is not supported (max {max})")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("unstable or invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid truncation policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),

    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("inversion grid rejected: {0}")]
    Aliasing(String),

    #[error("inverted pmf has mass {value:e} at index {index}, below the clipping threshold")]
    NegativeMass { index: usize, value: f64 },

    #[error("derivative error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    DerivativeTolerance { estimate: f64, tolerance: f64 },

    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),

    #[error("invalid MAP representation: {0}")]
    InvalidMap(String),

    #[error("commuting MAP is not Poisson: max |De - lambda e| = {0:e}")]
    PoissonReduction(f64),

    #[error("series truncation left tail mass {0:e} above budget")]
    TailBudget(f64),
}

impl Error {
    /// True for failures caused by bad inputs rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::InvalidDistribution(_)
                | Error::UnsupportedOrder { .. }
                | Error::InvalidModel(_)
                | Error::InvalidPolicy(_)
                | Error::InvalidInitialState(_)
                | Error::InvalidSimConfig(_)
                | Error::InvalidMap(_)
        )
    }
}
