//! Differentially private primitives for univariate statistics.
//!
//! All Laplace-based mechanisms here are pure `ε`-DP under the change-one
//! neighbor relation and report `delta = 0`. Every release is post-processed
//! back into its declared domain (range, non-negative counts, monotone CDF),
//! which costs no privacy.

mod cdf;
mod histogram;
mod laplace;
mod mean;
mod quantile;
mod snapping;
mod variable;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use cdf::exact_cdf;
pub use cdf::{dp_cdf, isotonic_non_decreasing};
pub(crate) use histogram::exact_histogram;
pub use histogram::{dp_histogram, BinSpec};
pub use laplace::{laplace_noise, Laplace};
pub use mean::dp_mean;
pub use quantile::{dp_quantile, quantile_utilities, DEFAULT_QUANTILE_CANDIDATES};
pub use snapping::{snap, SnapParams};
pub use variable::{
    clamp_column, clamp_value, ClampedColumn, Column, VariableKind, VariableSpec, OTHER_CATEGORY,
};

/// `1 −` the confidence level used when a request does not set one.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum MechanismError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no data to release")]
    EmptyData,
    #[error("variable `{name}` is {found}, but {statistic} needs a numeric variable")]
    WrongKind {
        name: String,
        found: &'static str,
        statistic: StatisticKind,
    },
    #[error("row {row}: `{token}` is not a valid value for variable `{variable}`")]
    Ingestion {
        variable: String,
        row: usize,
        token: String,
    },
}

pub(crate) fn check_epsilon(eps: f64) -> Result<(), MechanismError> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(MechanismError::InvalidParameter(format!(
            "epsilon must be finite and positive, got {eps}"
        )))
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<(), MechanismError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(MechanismError::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// The statistics the library knows how to release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    Mean,
    Histogram,
    Cdf,
    Quantile,
}

impl StatisticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StatisticKind::Mean => "mean",
            StatisticKind::Histogram => "histogram",
            StatisticKind::Cdf => "cdf",
            StatisticKind::Quantile => "quantile",
        }
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unsupported statistic `{0}`")]
pub struct UnsupportedStatistic(pub String);

impl FromStr for StatisticKind {
    type Err = UnsupportedStatistic;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(StatisticKind::Mean),
            "histogram" => Ok(StatisticKind::Histogram),
            "cdf" => Ok(StatisticKind::Cdf),
            "quantile" => Ok(StatisticKind::Quantile),
            other => Err(UnsupportedStatistic(other.to_string())),
        }
    }
}

/// The released numbers themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Estimate {
    Scalar {
        value: f64,
    },
    Histogram {
        labels: Vec<String>,
        counts: Vec<f64>,
    },
    /// `values[j]` estimates the fraction of records `<= points[j]`.
    Cdf {
        points: Vec<f64>,
        values: Vec<f64>,
    },
}

/// A computed release together with its privacy cost and a priori accuracy.
///
/// `accuracy` is in the units of the statistic: the variable's units for a
/// mean, counts for a histogram (simultaneous over bins), probability for a
/// CDF point and quantile level (fraction of `n`) for a quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseValue {
    pub kind: StatisticKind,
    pub estimate: Estimate,
    pub epsilon: f64,
    pub delta: f64,
    pub accuracy: f64,
    pub confidence: f64,
}
