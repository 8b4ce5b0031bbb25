//! Buffer-sizing mathematics.
//!
//! Under the reactive relay strategy the change of the buffer level between
//! two well-separated slots has variance
//!
//! ```text
//! sigma_delta^2 = 2 * sum_j sum_k w_j w_k Lambda(j, k)
//! Lambda(j, k)  = sum_{p=1..j} sum_{q=1..k} C(p - q)
//! ```
//!
//! where `C` is the autocovariance of the per-slot request counts and `w` the
//! relay-delay pmf. A buffer of `L = z * sigma_delta` with `Phi(-z) = epsilon`
//! keeps the probability of a lagged key supply below `epsilon`.

mod covariance;
mod fit;
mod normal;

pub use covariance::{estimate_autocovariance, lambda_table, sigma_delta, AutocovarianceSeries, LambdaTable};
pub(crate) use covariance::{estimate_autocovariance_counted, sigma_delta_counted};
pub use fit::{fit_normal, NormalFit};
pub use normal::{required_buffer, standard_normal_cdf, standard_normal_quantile};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("autocovariance covers {available} lags but {needed} are required")]
    LagRangeExceeded { needed: usize, available: usize },
    #[error("epsilon must lie in (0, 0.5), got {0}")]
    InvalidEpsilon(f64),
    #[error("sigma must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
    #[error("probability must lie in (0, 1), got {0}")]
    InvalidProbability(f64),
    #[error("samples have zero spread")]
    DegenerateDistribution,
    #[error("bin count must be positive")]
    InvalidBinCount,
    #[error("max lag must be positive")]
    InvalidLag,
}

/// Counts elementary arithmetic steps so tests can check asymptotic cost.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCount(pub u64);

impl OpCount {
    #[inline]
    pub fn add(&mut self, n: u64) {
        self.0 += n;
    }
}
