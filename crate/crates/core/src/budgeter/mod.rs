//! Global budget lifecycle: vetting the depositor's parameters, secrecy of
//! the sample, the depositor/analyst split, automatic repartition across
//! statistics, and durable per-account ledgers.

mod ledger;
mod repartition;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::{CompositionError, PrivacyParams};
use crate::request::RequestError;

pub use ledger::{AccountsConfig, Actor, LedgerError, LedgerRecord, LedgerStore, RecordKind, Tier};
pub use repartition::{repartition, RepartitionInput, RepartitionPlan};

/// `δ_g` at or above this is refused outright.
pub const DELTA_REJECT: f64 = 1e-4;
/// `δ_g` above this draws a warning.
pub const DELTA_WARN: f64 = 1e-6;
/// `ε_g` above this draws a warning.
pub const EPSILON_WARN: f64 = 1.0;

#[derive(Debug, Error)]
pub enum BudgetError {
    #[error("global privacy parameters rejected: {0}")]
    Rejected(String),
    #[error("invalid sample description: {0}")]
    InvalidSample(String),
    #[error("depositor asks for epsilon {requested} but only {available} is available")]
    OverRequest { requested: f64, available: f64 },
    #[error("the depositor share of the budget is zero, so no statistic can be released")]
    NoDepositorBudget,
    #[error("request id `{0}` appears more than once")]
    DuplicateId(String),
    #[error("held statistics {0:?} alone exceed the depositor budget")]
    InfeasibleHold(Vec<String>),
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error(transparent)]
    Composition(#[from] CompositionError),
}

impl BudgetError {
    /// Stable machine-readable reason.
    pub fn code(&self) -> &'static str {
        match self {
            BudgetError::Rejected(_) => "global_params_rejected",
            BudgetError::InvalidSample(_) => "invalid_sample",
            BudgetError::OverRequest { .. } => "depositor_over_request",
            BudgetError::NoDepositorBudget => "no_depositor_budget",
            BudgetError::DuplicateId(_) => "duplicate_request_id",
            BudgetError::InfeasibleHold(_) => "infeasible_hold",
            BudgetError::Request(_) => "invalid_request",
            BudgetError::Composition(_) => "composition_error",
        }
    }
}

/// Checks the depositor's global `(ε_g, δ_g)` and returns advisory warnings.
pub fn vet_global_params(epsilon: f64, delta: f64) -> Result<Vec<String>, BudgetError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(BudgetError::Rejected(format!(
            "epsilon must be a positive number, got {epsilon}"
        )));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(BudgetError::Rejected(format!(
            "delta must be a non-negative number, got {delta}"
        )));
    }
    if delta >= DELTA_REJECT {
        let mut msg = format!(
            "delta {delta} is far too large; it bounds the probability of a complete privacy \
             failure and should be tiny, e.g. 2^-20 ≈ 1e-6 or less (limit {DELTA_REJECT})"
        );
        if epsilon < delta {
            msg.push_str(&format!(
                "; epsilon {epsilon} is smaller than delta, so the two may have been swapped"
            ));
        }
        return Err(BudgetError::Rejected(msg));
    }
    let mut warnings = Vec::new();
    if epsilon > EPSILON_WARN {
        warnings.push(format!(
            "epsilon {epsilon} is above {EPSILON_WARN}; releases may reveal substantially more \
             about individuals"
        ));
    }
    if delta > DELTA_WARN {
        warnings.push(format!(
            "delta {delta} is above {DELTA_WARN}; values around 2^-20 or smaller are typical"
        ));
    }
    Ok(warnings)
}

/// Whether the dataset is a secret uniform sample of a larger population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub is_secret_sample: bool,
    /// Rows in the dataset.
    pub n: usize,
    /// Size of the population the rows were drawn from.
    pub m: usize,
}

/// Largest `δ` handed out after amplification; keeps parameters meaningful
/// when `δ_g·m/n` would reach 1.
pub const AMPLIFIED_DELTA_CAP: f64 = 0.5;

/// Parameters a computation on the sample may use so that, seen from the
/// population, it stays within `global`.
///
/// A mechanism that is `(ε, δ)`-DP on a secret uniform sample of `n` out of
/// `m` is `((e^ε − 1)·n/m, δ·n/m)`-DP on the population. Inverting gives
/// `ε_eff = ln(1 + ε_g·m/n)` and `δ_eff = δ_g·m/n`. When the inversion would
/// not help (`ε_eff < ε_g`), `global` is returned unchanged.
pub fn amplify_budget(
    global: PrivacyParams,
    sample: &SampleInfo,
) -> Result<PrivacyParams, BudgetError> {
    if !sample.is_secret_sample {
        return Ok(global);
    }
    if sample.n == 0 {
        return Err(BudgetError::InvalidSample(
            "sample size n must be at least 1".into(),
        ));
    }
    if sample.m < sample.n {
        return Err(BudgetError::InvalidSample(format!(
            "population size {} is smaller than the sample size {}",
            sample.m, sample.n
        )));
    }
    let ratio = sample.m as f64 / sample.n as f64;
    let epsilon = (global.epsilon * ratio).ln_1p();
    if epsilon < global.epsilon {
        return Ok(global);
    }
    Ok(PrivacyParams {
        epsilon,
        delta: (global.delta * ratio).min(AMPLIFIED_DELTA_CAP),
    })
}

/// How the effective budget is divided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalBudget {
    pub global: PrivacyParams,
    /// After secrecy-of-the-sample amplification, if any.
    pub effective: PrivacyParams,
    pub depositor: PrivacyParams,
    pub analyst: PrivacyParams,
}

/// Reserves `epsilon_d` for the depositor and the rest for analysts, by
/// subtraction. `δ` is split in the same proportion.
pub fn split_budget(
    global: PrivacyParams,
    effective: PrivacyParams,
    epsilon_d: f64,
) -> Result<GlobalBudget, BudgetError> {
    if !(epsilon_d.is_finite() && epsilon_d >= 0.0) {
        return Err(BudgetError::Rejected(format!(
            "depositor epsilon must be non-negative, got {epsilon_d}"
        )));
    }
    if epsilon_d > effective.epsilon * (1.0 + crate::composition::FEASIBILITY_TOLERANCE) {
        return Err(BudgetError::OverRequest {
            requested: epsilon_d,
            available: effective.epsilon,
        });
    }
    let epsilon_d = epsilon_d.min(effective.epsilon);
    let share = epsilon_d / effective.epsilon;
    let delta_d = effective.delta * share;
    Ok(GlobalBudget {
        global,
        effective,
        depositor: PrivacyParams {
            epsilon: epsilon_d,
            delta: delta_d,
        },
        analyst: PrivacyParams {
            epsilon: (effective.epsilon - epsilon_d).max(0.0),
            delta: (effective.delta - delta_d).max(0.0),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swapped_parameters_rejected() {
        let err = vet_global_params(1e-6, 0.25).unwrap_err();
        assert!(err.to_string().contains("swapped"), "{err}");
        assert_eq!(err.code(), "global_params_rejected");
    }

    #[test]
    fn typical_parameters_pass_quietly() {
        assert!(vet_global_params(0.3, 2f64.powi(-20)).unwrap().is_empty());
    }

    #[test]
    fn large_epsilon_warns() {
        let w = vet_global_params(5.0, 2f64.powi(-30)).unwrap();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn nonpositive_epsilon_rejected() {
        assert!(vet_global_params(0.0, 0.0).is_err());
        assert!(vet_global_params(-1.0, 0.0).is_err());
        assert!(vet_global_params(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn amplification_hundredfold() {
        let dg = 2f64.powi(-20);
        let g = PrivacyParams::new(0.5, dg).unwrap();
        let s = SampleInfo {
            is_secret_sample: true,
            n: 1000,
            m: 100_000,
        };
        let eff = amplify_budget(g, &s).unwrap();
        assert!((eff.epsilon - 51f64.ln()).abs() < 1e-12);
        assert!((eff.epsilon - 3.932).abs() < 1e-3);
        assert!((eff.delta - 100.0 * dg).abs() < 1e-18);
        // Plug back into the forward statement.
        assert!(eff.epsilon.exp_m1() / 100.0 <= 0.5 * (1.0 + 1e-12));
    }

    #[test]
    fn not_secret_is_identity() {
        let g = PrivacyParams::new(0.5, 1e-7).unwrap();
        let s = SampleInfo {
            is_secret_sample: false,
            n: 10,
            m: 1,
        };
        assert_eq!(amplify_budget(g, &s).unwrap(), g);
    }

    #[test]
    fn population_smaller_than_sample_rejected() {
        let g = PrivacyParams::pure(0.5);
        let s = SampleInfo {
            is_secret_sample: true,
            n: 10,
            m: 5,
        };
        assert!(amplify_budget(g, &s).is_err());
    }

    #[test]
    fn large_epsilon_unamplified_when_it_would_shrink() {
        // ln(1 + 5·1.01) < 5.
        let g = PrivacyParams::pure(5.0);
        let s = SampleInfo {
            is_secret_sample: true,
            n: 100,
            m: 101,
        };
        assert_eq!(amplify_budget(g, &s).unwrap(), g);
    }

    #[test]
    fn split_by_subtraction() {
        let g = PrivacyParams::new(1.0, 1e-6).unwrap();
        let b = split_budget(g, g, 0.6).unwrap();
        assert!((b.analyst.epsilon - 0.4).abs() < 1e-15);
        assert!((b.depositor.delta - 0.6e-6).abs() < 1e-20);
        assert!((b.analyst.delta - 0.4e-6).abs() < 1e-20);
        let all = split_budget(g, g, 1.0).unwrap();
        assert_eq!(all.analyst.epsilon, 0.0);
        let none = split_budget(g, g, 0.0).unwrap();
        assert_eq!(none.analyst, g);
        assert!(matches!(
            split_budget(g, g, 1.5),
            Err(BudgetError::OverRequest { .. })
        ));
    }
}
