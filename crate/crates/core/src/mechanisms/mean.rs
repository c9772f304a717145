use rand::{CryptoRng, RngCore};

use super::{
    check_alpha, check_epsilon, clamp_value, Estimate, Laplace, MechanismError, ReleaseValue,
    StatisticKind, VariableSpec,
};
use crate::accuracy::{epsilon_to_accuracy, AccuracyContext};

pub(crate) fn numeric_range(
    spec: &VariableSpec,
    statistic: StatisticKind,
) -> Result<(f64, f64), MechanismError> {
    spec.validate()?;
    spec.range().ok_or_else(|| MechanismError::WrongKind {
        name: spec.name.clone(),
        found: spec.kind_name(),
        statistic,
    })
}

/// Laplace mean: `clamp(mean + Lap((b − a) / (n·ε)))` into `[a, b]`.
///
/// Values are truncated into the declared range before summing, so the
/// sensitivity bound holds even for an unclamped column.
pub fn dp_mean<R: RngCore + CryptoRng + ?Sized>(
    column: &[f64],
    spec: &VariableSpec,
    eps: f64,
    alpha: f64,
    rng: &mut R,
) -> Result<ReleaseValue, MechanismError> {
    check_epsilon(eps)?;
    check_alpha(alpha)?;
    let (lower, upper) = numeric_range(spec, StatisticKind::Mean)?;
    if column.is_empty() {
        return Err(MechanismError::EmptyData);
    }
    let n = column.len() as f64;
    let sum: f64 = column.iter().map(|&x| clamp_value(x, lower, upper)).sum();
    let scale = (upper - lower) / (n * eps);
    let noisy = sum / n + Laplace::new(scale)?.sample(rng);
    let ctx = AccuracyContext::new(column.len()).with_range(upper - lower);
    let accuracy = epsilon_to_accuracy(StatisticKind::Mean, eps, alpha, &ctx)
        .map_err(|e| MechanismError::InvalidParameter(e.to_string()))?;
    Ok(ReleaseValue {
        kind: StatisticKind::Mean,
        estimate: Estimate::Scalar {
            value: clamp_value(noisy, lower, upper),
        },
        epsilon: eps,
        delta: 0.0,
        accuracy,
        confidence: 1.0 - alpha,
    })
}
