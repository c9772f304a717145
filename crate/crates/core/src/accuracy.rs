//! Translation between a statistic's privacy loss `ε` and its a priori
//! accuracy: the radius `t` such that the release lies within `t` of the
//! true value with probability at least `1 − α`.
//!
//! Every bound has the form `t = C / ε` where `C` depends on the statistic
//! kind, `α` and public metadata, so both directions are exact inverses.
//!
//! | kind      | `C`                                  | units of `t`         |
//! |-----------|--------------------------------------|----------------------|
//! | mean      | `(b − a)·ln(1/α) / n`                | variable units       |
//! | histogram | `2·ln(k/α)`                          | counts, all bins     |
//! | cdf       | `L·2L·ln(L/α) / n`, `L = log2(g)`    | probability, per point |
//! | quantile  | `2·(ln m + ln(1/α)) / n`             | quantile level       |
//!
//! The quantile bound is the exponential-mechanism guarantee over `m` cells:
//! the rank interval of the selected cell lies within `t·n` ranks of `q·n`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanisms::{StatisticKind, UnsupportedStatistic};

#[derive(Debug, Error, PartialEq)]
pub enum AccuracyError {
    #[error(transparent)]
    Unsupported(#[from] UnsupportedStatistic),
    #[error("invalid accuracy parameter: {0}")]
    InvalidParameter(String),
    #[error("accuracy {accuracy} needs epsilon {required}, above the ceiling {ceiling}")]
    BudgetInfeasible {
        accuracy: f64,
        required: f64,
        ceiling: f64,
    },
}

/// Public metadata the bounds depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyContext {
    /// Number of records.
    pub n: usize,
    /// `b − a` of the (possibly derived) variable.
    #[serde(default)]
    pub range_width: f64,
    /// Histogram bin count `k`.
    #[serde(default)]
    pub bins: usize,
    /// CDF grid size `g` (a power of two).
    #[serde(default)]
    pub grid: usize,
    /// Quantile candidate count `m`.
    #[serde(default)]
    pub candidates: usize,
}

impl AccuracyContext {
    pub fn new(n: usize) -> Self {
        AccuracyContext {
            n,
            range_width: 0.0,
            bins: 0,
            grid: 0,
            candidates: 0,
        }
    }

    pub fn with_range(mut self, width: f64) -> Self {
        self.range_width = width;
        self
    }

    pub fn with_bins(mut self, bins: usize) -> Self {
        self.bins = bins;
        self
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_candidates(mut self, candidates: usize) -> Self {
        self.candidates = candidates;
        self
    }
}

fn invalid(msg: String) -> AccuracyError {
    AccuracyError::InvalidParameter(msg)
}

/// `C` in `t = C / ε`.
fn numerator(kind: StatisticKind, alpha: f64, ctx: &AccuracyContext) -> Result<f64, AccuracyError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let need_n = || {
        if ctx.n == 0 {
            Err(invalid("record count n must be at least 1".into()))
        } else {
            Ok(ctx.n as f64)
        }
    };
    let log_inv_alpha = (1.0 / alpha).ln();
    match kind {
        StatisticKind::Mean => {
            let n = need_n()?;
            if !(ctx.range_width.is_finite() && ctx.range_width > 0.0) {
                return Err(invalid(format!(
                    "mean accuracy needs a positive range width, got {}",
                    ctx.range_width
                )));
            }
            Ok(ctx.range_width * log_inv_alpha / n)
        }
        StatisticKind::Histogram => {
            if ctx.bins == 0 {
                return Err(invalid("histogram accuracy needs at least one bin".into()));
            }
            Ok(2.0 * (ctx.bins as f64 / alpha).ln())
        }
        StatisticKind::Cdf => {
            let n = need_n()?;
            if ctx.grid < 2 || !ctx.grid.is_power_of_two() {
                return Err(invalid(format!(
                    "CDF grid size must be a power of two >= 2, got {}",
                    ctx.grid
                )));
            }
            let levels = ctx.grid.trailing_zeros() as f64;
            Ok(levels * 2.0 * levels * (levels / alpha).ln() / n)
        }
        StatisticKind::Quantile => {
            let n = need_n()?;
            if ctx.candidates == 0 {
                return Err(invalid(
                    "quantile accuracy needs at least one candidate".into(),
                ));
            }
            Ok(2.0 * ((ctx.candidates as f64).ln() + log_inv_alpha) / n)
        }
    }
}

/// A priori accuracy radius of a release computed with privacy loss `eps`.
pub fn epsilon_to_accuracy(
    kind: StatisticKind,
    eps: f64,
    alpha: f64,
    ctx: &AccuracyContext,
) -> Result<f64, AccuracyError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(invalid(format!(
            "epsilon must be finite and positive, got {eps}"
        )));
    }
    Ok(numerator(kind, alpha, ctx)? / eps)
}

/// Privacy loss needed to reach accuracy radius `t`; fails when it would
/// exceed `ceiling`.
pub fn accuracy_to_epsilon(
    kind: StatisticKind,
    t: f64,
    alpha: f64,
    ctx: &AccuracyContext,
    ceiling: f64,
) -> Result<f64, AccuracyError> {
    if !(t.is_finite() && t > 0.0) {
        return Err(invalid(format!(
            "accuracy must be finite and positive, got {t}"
        )));
    }
    let eps = numerator(kind, alpha, ctx)? / t;
    if eps > ceiling || !eps.is_finite() {
        return Err(AccuracyError::BudgetInfeasible {
            accuracy: t,
            required: eps,
            ceiling,
        });
    }
    Ok(eps)
}

/// Same as [`epsilon_to_accuracy`] but takes the kind by name.
pub fn epsilon_to_accuracy_named(
    kind: &str,
    eps: f64,
    alpha: f64,
    ctx: &AccuracyContext,
) -> Result<f64, AccuracyError> {
    epsilon_to_accuracy(kind.parse()?, eps, alpha, ctx)
}
