use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(transparent)]
    Calibration(#[from] CalibrationFailure),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("target delay {target} slots is below the reachable floor of {floor:.3} slots")]
    DelayUnreachable { target: f64, floor: f64 },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

/// Report produced when no search point passes the validity checks.
///
/// Residuals are relative: flow residuals are scaled by the inflow rate and the
/// power residual by the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFailure {
    pub eta: f64,
    pub residual_c1: f64,
    pub residual_c2: f64,
    pub residual_power: Option<f64>,
    pub tried: Vec<String>,
}

impl fmt::Display for CalibrationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "no valid weights for eta={} (best residuals c1={:.3e} c2={:.3e}",
            self.eta, self.residual_c1, self.residual_c2
        )?;
        if let Some(p) = self.residual_power {
            write!(f, " power={p:.3e}")?;
        }
        write!(f, "; tried {})", self.tried.join(", "))
    }
}

impl std::error::Error for CalibrationFailure {}
