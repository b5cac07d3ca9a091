use thiserror::Error;

/// A violated constraint on the model parameters.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("parameter `{name}` must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("gamma must lie in (0, 1), got {0}")]
    GammaOutOfRange(f64),
    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("interest rate r must be non-negative, got {0}")]
    NegativeRate(f64),
    #[error("kappa < r (kappa = {kappa}, r = {r})")]
    KappaBelowRate { kappa: f64, r: f64 },
    #[error("Riccati discriminant must be positive (kappa^2 > r^2 gamma), got {0}")]
    NonPositiveDiscriminant(f64),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("self-test failed: {0}")]
    SelfTest(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("simulation diverged on path {path} at step {step}: {detail}")]
    Simulation {
        path: usize,
        step: usize,
        detail: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
