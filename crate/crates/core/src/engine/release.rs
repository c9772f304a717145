use std::collections::HashSet;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metadata::{Audience, RecordData, ReleaseRecord};
use super::{Dataset, EngineError};
use crate::accuracy::{epsilon_to_accuracy, AccuracyContext};
use crate::budgeter::{Actor, LedgerStore, Tier};
use crate::composition::PrivacyParams;
use crate::dsl::evaluate_rows;
use crate::mechanisms::{
    clamp_value, dp_cdf, dp_histogram, dp_mean, dp_quantile, snap, Column, Estimate,
    MechanismError, ReleaseValue, SnapParams, StatisticKind, VariableSpec,
};
use crate::request::{ResolvedTarget, StatisticRequest, TargetSource};
use crate::rng::{child_rng, NoiseRng};

/// A batch of statistics submitted for release.
///
/// Any totals a client attaches are accepted and ignored; the cost is always
/// recomputed from the per-statistic parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReleaseBatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_id: Option<String>,
    pub requests: Vec<StatisticRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claimed_total: Option<PrivacyParams>,
}

impl ReleaseBatch {
    pub fn new(requests: Vec<StatisticRequest>) -> Self {
        ReleaseBatch {
            requests,
            ..Default::default()
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.batch_id = Some(id.into());
        self
    }
}

/// Outcome of [`verify_request`].
#[derive(Debug, Clone)]
pub struct Verified {
    pub targets: Vec<ResolvedTarget>,
    /// Cost recomputed by the engine.
    pub cost: PrivacyParams,
    pub remaining: PrivacyParams,
}

pub(crate) fn check_batch_id(id: &str) -> Result<(), EngineError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.:".contains(c));
    if ok {
        Ok(())
    } else {
        Err(EngineError::Invalid(format!(
            "batch id `{}` must be 1-128 characters from [A-Za-z0-9-_.:]",
            id.escape_debug()
        )))
    }
}

/// Resolves every request against the schema and prices the batch against
/// the actor's ledger, trusting nothing in the submission beyond the
/// per-statistic `(εᵢ, δᵢ)`.
pub fn verify_request(
    schema: &[VariableSpec],
    batch: &[StatisticRequest],
    ledger: &LedgerStore,
    actor: &Actor,
) -> Result<Verified, EngineError> {
    let mut ids = HashSet::new();
    let mut targets = Vec::with_capacity(batch.len());
    for r in batch {
        if !ids.insert(r.id.as_str()) {
            return Err(EngineError::Invalid(format!(
                "request id `{}` appears twice",
                r.id
            )));
        }
        if !(r.epsilon.is_finite() && r.epsilon > 0.0) {
            return Err(EngineError::Invalid(format!(
                "request `{}` needs a positive epsilon to be released, got {}",
                r.id, r.epsilon
            )));
        }
        targets.push(r.resolve(schema)?);
    }
    let params: Vec<PrivacyParams> = batch.iter().map(StatisticRequest::privacy).collect();
    let cost = ledger.quote(actor, &params)?;
    let remaining = ledger.remaining(actor)?;
    Ok(Verified {
        targets,
        cost,
        remaining,
    })
}

/// Records of a batch and what is left afterwards.
#[derive(Debug, Clone, Serialize)]
pub struct ReleaseOutcome {
    pub batch_id: String,
    pub records: Vec<ReleaseRecord>,
    pub cost: PrivacyParams,
    pub remaining: PrivacyParams,
}

pub(crate) fn audience_of(actor: &Actor) -> Audience {
    match (actor.tier, &actor.user) {
        (Tier::SemiTrusted, Some(u)) => Audience::User(u.clone()),
        _ => Audience::Public,
    }
}

/// Verifies, deducts, then computes every statistic in `batch`.
///
/// The deduction is written to disk before any data is touched. If a
/// mechanism fails, the batch is refunded and nothing is released; a crash
/// after the deduction leaves the budget spent without a release.
pub fn execute_release(
    dataset: &Dataset,
    batch: &ReleaseBatch,
    ledger: &LedgerStore,
    actor: &Actor,
    rng: &mut NoiseRng,
    now: u64,
) -> Result<ReleaseOutcome, EngineError> {
    let batch_id = match &batch.batch_id {
        Some(id) => id.clone(),
        None => format!("b{:016x}", rng.next_u64()),
    };
    check_batch_id(&batch_id)?;
    if batch.requests.is_empty() {
        return Ok(ReleaseOutcome {
            batch_id,
            records: Vec::new(),
            cost: PrivacyParams::pure(0.0),
            remaining: ledger.remaining(actor)?,
        });
    }
    let verified = verify_request(dataset.schema(), &batch.requests, ledger, actor)?;
    let params: Vec<PrivacyParams> = batch
        .requests
        .iter()
        .map(StatisticRequest::privacy)
        .collect();
    let entry = ledger.deduct_at(actor, &batch_id, &params, now)?;

    let mut rngs: Vec<NoiseRng> = (0..batch.requests.len()).map(|_| child_rng(rng)).collect();
    let computed: Result<Vec<(ReleaseValue, &'static str)>, EngineError> = batch
        .requests
        .par_iter()
        .zip(&verified.targets)
        .zip(rngs.par_iter_mut())
        .map(|((r, t), rng)| compute(dataset, r, t, rng))
        .collect();
    let computed = match computed {
        Ok(c) => c,
        Err(e) => {
            ledger.refund(actor, &batch_id)?;
            return Err(e);
        }
    };

    let audience = audience_of(actor);
    let records = batch
        .requests
        .iter()
        .zip(&verified.targets)
        .zip(computed)
        .map(|((r, t), (value, mechanism))| {
            ReleaseRecord::new(RecordData {
                dataset_id: dataset.id().to_string(),
                request_id: r.id.clone(),
                statistic: r.statistic,
                variable: t.spec.name.clone(),
                transform: r.transform.as_ref().map(|t| t.program.clone()),
                mechanism: mechanism.to_string(),
                quantile: (r.statistic == StatisticKind::Quantile).then(|| r.quantile_level()),
                epsilon: r.epsilon,
                delta: r.delta,
                accuracy: value.accuracy,
                alpha: r.alpha,
                value: value.estimate,
                batch_id: batch_id.clone(),
                timestamp: now,
                audience: audience.clone(),
            })
        })
        .collect();
    Ok(ReleaseOutcome {
        batch_id,
        records,
        cost: entry.cost,
        remaining: ledger.remaining(actor)?,
    })
}

/// Runs one mechanism; also used by the evaluation harness, which has no
/// ledger.
pub(crate) fn compute(
    dataset: &Dataset,
    r: &StatisticRequest,
    target: &ResolvedTarget,
    rng: &mut NoiseRng,
) -> Result<(ReleaseValue, &'static str), EngineError> {
    let derived;
    let column: &Column = match &target.source {
        TargetSource::Column(i) => dataset.column(*i),
        TargetSource::Derived(d) => {
            let inputs: Vec<&[f64]> = d
                .columns
                .iter()
                .map(|&i| {
                    dataset
                        .column(i)
                        .as_numeric()
                        .expect("transforms read numeric columns")
                })
                .collect();
            derived = Column::Numeric(evaluate_rows(&d.program, &inputs, d.declared));
            &derived
        }
    };
    let spec = &target.spec;
    let numeric = || {
        column
            .as_numeric()
            .ok_or_else(|| MechanismError::WrongKind {
                name: spec.name.clone(),
                found: spec.kind_name(),
                statistic: r.statistic,
            })
    };
    let eps = r.epsilon;
    let out = match r.statistic {
        StatisticKind::Mean if r.snapping => (
            snapped_mean(numeric()?, spec, eps, r.alpha, rng)?,
            "snapping",
        ),
        StatisticKind::Mean => (dp_mean(numeric()?, spec, eps, r.alpha, rng)?, "laplace"),
        StatisticKind::Histogram => (
            dp_histogram(column, spec, eps, &r.bin_spec(spec), r.alpha, rng)?,
            "laplace",
        ),
        StatisticKind::Cdf => (
            dp_cdf(numeric()?, spec, eps, r.grid_size(), r.alpha, rng)?,
            "laplace_tree",
        ),
        StatisticKind::Quantile => (
            dp_quantile(
                numeric()?,
                spec,
                eps,
                r.quantile_level(),
                r.candidate_count(),
                r.alpha,
                rng,
            )?,
            "exponential",
        ),
    };
    Ok(out)
}

/// `ε` to run the snapping mechanism at so that its guarantee,
/// `ε' + 2^-49·(B/Δ)·ε'²`, stays within the charged `ε`.
pub fn snapping_noise_epsilon(eps: f64, bound: f64, sensitivity: f64) -> f64 {
    eps / (1.0 + 2f64.powi(-49) * (bound / sensitivity) * eps)
}

/// Mean released through the snapping mechanism, centred on the range
/// midpoint so the clamp bound is half the range.
fn snapped_mean(
    column: &[f64],
    spec: &VariableSpec,
    eps: f64,
    alpha: f64,
    rng: &mut NoiseRng,
) -> Result<ReleaseValue, MechanismError> {
    let (lower, upper) = spec.range().ok_or_else(|| MechanismError::WrongKind {
        name: spec.name.clone(),
        found: spec.kind_name(),
        statistic: StatisticKind::Mean,
    })?;
    if column.is_empty() {
        return Err(MechanismError::EmptyData);
    }
    let n = column.len() as f64;
    let centre = 0.5 * (lower + upper);
    let bound = 0.5 * (upper - lower);
    let sensitivity = (upper - lower) / n;
    let noise_eps = snapping_noise_epsilon(eps, bound, sensitivity);
    if sensitivity / noise_eps >= bound {
        return Err(MechanismError::InvalidParameter(format!(
            "snapping needs n·epsilon > 2, got {}",
            n * eps
        )));
    }
    let params = SnapParams::for_laplace(bound, sensitivity, noise_eps)?;
    let mean = column
        .iter()
        .map(|&x| clamp_value(x, lower, upper))
        .sum::<f64>()
        / n;
    let noisy = snap(mean - centre, &params, noise_eps, rng)?;
    let ctx = AccuracyContext::new(column.len()).with_range(upper - lower);
    let laplace = epsilon_to_accuracy(StatisticKind::Mean, noise_eps, alpha, &ctx)
        .map_err(|e| MechanismError::InvalidParameter(e.to_string()))?;
    Ok(ReleaseValue {
        kind: StatisticKind::Mean,
        estimate: Estimate::Scalar {
            value: clamp_value(centre + noisy, lower, upper),
        },
        epsilon: eps,
        delta: 0.0,
        // Rounding to the grid moves the output by at most half a step.
        accuracy: laplace + 0.5 * params.grid,
        confidence: 1.0 - alpha,
    })
}
