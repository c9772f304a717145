//! Privacy accounting.
//!
//! [`basic_compose`] sums parameters. [`optimal`] finds the least composed
//! `ε_g` at a given `δ_g`, exactly for up to twenty mechanisms and by a
//! discretized upper bound beyond that. [`BatchLedger`] applies optimal
//! composition inside each non-adaptive batch and basic composition across
//! batches.

mod filter;
pub mod optimal;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{BatchCost, BatchLedger, BatchRejection, DeltaPolicy};
pub use optimal::{
    optimal_epsilon_approx, optimal_epsilon_exact, optimal_feasible_approx, optimal_feasible_exact,
    EXACT_LIMIT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositionError {
    #[error("invalid privacy parameter: {0}")]
    InvalidParameter(String),
    #[error("nothing to compose")]
    Empty,
    #[error(
        "global delta {delta_g} is below the floor {floor} implied by the per-statistic deltas"
    )]
    InfeasibleDelta { delta_g: f64, floor: f64 },
    #[error("exact composition handles at most {limit} mechanisms, got {k}")]
    TooMany { k: usize, limit: usize },
    #[error("held statistics {held:?} alone exceed the global budget")]
    InfeasibleHold { held: Vec<usize> },
}

/// An `(ε, δ)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, CompositionError> {
        let p = PrivacyParams { epsilon, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn pure(epsilon: f64) -> Self {
        PrivacyParams {
            epsilon,
            delta: 0.0,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<(), CompositionError> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(CompositionError::InvalidParameter(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(CompositionError::InvalidParameter(format!(
                "delta must lie in [0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// `(Σεᵢ, Σδᵢ)`. An empty list costs nothing; a `δ` sum of 1 or more is
/// returned as is and callers treat it as infeasible.
pub fn basic_compose(params: &[PrivacyParams]) -> PrivacyParams {
    PrivacyParams {
        epsilon: params.iter().map(|p| p.epsilon).sum(),
        delta: params.iter().map(|p| p.delta).sum(),
    }
}

/// How costs within one batch are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CompositionRule {
    Basic,
    /// Exact optimal composition up to [`EXACT_LIMIT`] statistics, the
    /// approximation with this additive slack beyond.
    Optimal {
        approx_slack: f64,
    },
}

impl Default for CompositionRule {
    fn default() -> Self {
        CompositionRule::Optimal { approx_slack: 1e-3 }
    }
}

/// Relative tolerance on feasibility comparisons, absorbing floating-point
/// drift in the composition search.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

/// `value ≤ limit` up to [`FEASIBILITY_TOLERANCE`].
pub fn within(value: f64, limit: f64) -> bool {
    value <= limit * (1.0 + FEASIBILITY_TOLERANCE) + 1e-15
}

fn split(params: &[PrivacyParams]) -> (Vec<f64>, Vec<f64>) {
    params.iter().map(|p| (p.epsilon, p.delta)).unzip()
}

/// Composed `ε` of `params` at `delta_g` under `rule`. Under basic
/// composition `delta_g` must cover `Σδᵢ`.
pub fn composed_epsilon(
    params: &[PrivacyParams],
    delta_g: f64,
    rule: CompositionRule,
) -> Result<f64, CompositionError> {
    if params.is_empty() {
        return Ok(0.0);
    }
    let (eps, deltas) = split(params);
    match rule {
        CompositionRule::Basic => {
            let total = basic_compose(params);
            if !within(total.delta, delta_g) {
                return Err(CompositionError::InfeasibleDelta {
                    delta_g,
                    floor: total.delta,
                });
            }
            Ok(total.epsilon)
        }
        CompositionRule::Optimal { approx_slack } => {
            if params.len() <= EXACT_LIMIT {
                optimal_epsilon_exact(&eps, &deltas, delta_g)
            } else {
                optimal_epsilon_approx(&eps, &deltas, delta_g, approx_slack)
            }
        }
    }
}

/// Whether `params` compose to within `global` under `rule`.
pub fn check_within_budget(
    params: &[PrivacyParams],
    global: PrivacyParams,
    rule: CompositionRule,
) -> bool {
    if params.is_empty() {
        return true;
    }
    if params.iter().any(|p| p.validate().is_err()) || global.validate().is_err() {
        return false;
    }
    let eps_limit = global.epsilon * (1.0 + FEASIBILITY_TOLERANCE) + 1e-15;
    match rule {
        CompositionRule::Basic => {
            let total = basic_compose(params);
            within(total.epsilon, global.epsilon) && within(total.delta, global.delta)
        }
        CompositionRule::Optimal { approx_slack } => {
            let (eps, deltas) = split(params);
            let decision = if params.len() <= EXACT_LIMIT {
                optimal_feasible_exact(&eps, &deltas, eps_limit, global.delta)
            } else {
                optimal_feasible_approx(&eps, &deltas, eps_limit, global.delta, approx_slack)
            };
            decision.unwrap_or(false)
        }
    }
}

/// Relative precision of [`max_scale_factor`].
const SCALE_TOLERANCE: f64 = 1e-9;

/// Largest `c` such that multiplying every unheld `εᵢ` by `c` keeps the set
/// within `global`. Held statistics keep their `ε`; every `δᵢ` is unchanged.
/// Returns 1 when everything is held.
pub fn max_scale_factor(
    params: &[PrivacyParams],
    held: &[bool],
    global: PrivacyParams,
    rule: CompositionRule,
) -> Result<f64, CompositionError> {
    if params.len() != held.len() {
        return Err(CompositionError::InvalidParameter(format!(
            "{} statistics but {} hold flags",
            params.len(),
            held.len()
        )));
    }
    global.validate()?;
    for p in params {
        p.validate()?;
    }
    let scaled = |c: f64| -> Vec<PrivacyParams> {
        params
            .iter()
            .zip(held)
            .map(|(p, &h)| PrivacyParams {
                epsilon: if h { p.epsilon } else { p.epsilon * c },
                delta: p.delta,
            })
            .collect()
    };
    // Search against a limit shrunk by the tolerance so the plan itself
    // never exceeds `global`; admission still allows the tolerance.
    let strict = PrivacyParams {
        epsilon: global.epsilon / (1.0 + FEASIBILITY_TOLERANCE),
        delta: global.delta,
    };
    let feasible = |c: f64| check_within_budget(&scaled(c), strict, rule);

    if !check_within_budget(&scaled(0.0), global, rule) {
        return Err(CompositionError::InfeasibleHold {
            held: held
                .iter()
                .enumerate()
                .filter(|(_, &h)| h)
                .map(|(i, _)| i)
                .collect(),
        });
    }
    let unheld_positive = params.iter().zip(held).any(|(p, &h)| !h && p.epsilon > 0.0);
    if !unheld_positive {
        return Ok(1.0);
    }

    let (mut lo, mut hi) = (0.0, 1.0);
    while feasible(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Ok(lo);
        }
    }
    while hi - lo > SCALE_TOLERANCE * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
