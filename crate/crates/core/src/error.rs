use thiserror::Error;

/// Errors produced while building networks, models, and running experiments.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("combination matrix is not primitive: {0}")]
    NotPrimitive(String),

    #[error("non-primitive or ill-conditioned spectrum: residual eigenvalue magnitude {magnitude:.12} is within 1e-8 of 1")]
    IllConditionedSpectrum { magnitude: f64 },

    #[error("combination matrix is not diagonalizable (eigenbasis condition number {condition:.3e} exceeds 1e8)")]
    Defective { condition: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "not globally observable under p: smallest eigenvalue of sum_k p_k R_k is {min_eig:.3e}"
    )]
    NotObservable { min_eig: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("divergence at iteration {iteration}{}", trial.map(|t| format!(" (trial {t})")).unwrap_or_default())]
    Divergence {
        iteration: usize,
        trial: Option<usize>,
    },

    #[error("step-size too large for bound validity: lambda_L - mu*|p|_1^2*lambda_U^2/2 = {denominator:.3e} <= 0")]
    StepSizeTooLarge { denominator: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("horizon insufficient: {0}")]
    HorizonInsufficient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
