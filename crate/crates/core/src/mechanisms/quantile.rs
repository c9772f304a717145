use rand::{CryptoRng, RngCore};

use super::mean::numeric_range;
use super::{
    check_alpha, check_epsilon, clamp_value, Estimate, MechanismError, ReleaseValue, StatisticKind,
    VariableSpec,
};
use crate::accuracy::{epsilon_to_accuracy, AccuracyContext};
use crate::rng::uniform_open_closed;

pub const DEFAULT_QUANTILE_CANDIDATES: usize = 1024;

fn candidate(lower: f64, upper: f64, m: usize, i: usize) -> f64 {
    lower + (i as f64 + 0.5) * (upper - lower) / m as f64
}

/// Utility of each of the `m` candidate cells of `[lower, upper]`.
///
/// With `L_i` the number of records left of cell `i` and `R_i` the number up
/// to its right edge, the utility is `−dist(q·n, [L_i, R_i])`: zero for any
/// cell that holds the `q`-quantile and minus the rank shortfall otherwise.
/// Replacing one record moves each of `L_i`, `R_i` by at most one, so the
/// utility has sensitivity 1, and some cell always scores 0.
pub fn quantile_utilities(column: &[f64], lower: f64, upper: f64, q: f64, m: usize) -> Vec<f64> {
    let per_unit = m as f64 / (upper - lower);
    let mut cells = vec![0u64; m];
    for &x in column {
        let x = clamp_value(x, lower, upper);
        cells[(((x - lower) * per_unit) as usize).min(m - 1)] += 1;
    }
    let target = q * column.len() as f64;
    let mut left = 0u64;
    cells
        .iter()
        .map(|&c| {
            let (lo, hi) = (left as f64, (left + c) as f64);
            left += c;
            -(lo - target).max(target - hi).max(0.0)
        })
        .collect()
}

/// Quantile by the exponential mechanism over `m` equal-width cells of the
/// declared range; the release is the chosen cell's midpoint.
pub fn dp_quantile<R: RngCore + CryptoRng + ?Sized>(
    column: &[f64],
    spec: &VariableSpec,
    eps: f64,
    q: f64,
    candidates: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<ReleaseValue, MechanismError> {
    check_epsilon(eps)?;
    check_alpha(alpha)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(MechanismError::InvalidParameter(format!(
            "quantile level must lie in (0, 1), got {q}"
        )));
    }
    if candidates == 0 {
        return Err(MechanismError::InvalidParameter(
            "quantile needs at least one candidate".into(),
        ));
    }
    let (lower, upper) = numeric_range(spec, StatisticKind::Quantile)?;
    if column.is_empty() {
        return Err(MechanismError::EmptyData);
    }
    let utilities = quantile_utilities(column, lower, upper, q, candidates);
    let index = exponential_select(&utilities, eps, rng);

    let ctx = AccuracyContext::new(column.len()).with_candidates(candidates);
    let accuracy = epsilon_to_accuracy(StatisticKind::Quantile, eps, alpha, &ctx)
        .map_err(|e| MechanismError::InvalidParameter(e.to_string()))?;
    Ok(ReleaseValue {
        kind: StatisticKind::Quantile,
        estimate: Estimate::Scalar {
            value: candidate(lower, upper, candidates, index),
        },
        epsilon: eps,
        delta: 0.0,
        accuracy,
        confidence: 1.0 - alpha,
    })
}

/// Picks index `i` with probability proportional to `exp(ε·u_i / 2)`.
fn exponential_select<R: RngCore + CryptoRng + ?Sized>(
    utilities: &[f64],
    eps: f64,
    rng: &mut R,
) -> usize {
    let best = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = utilities
        .iter()
        .map(|u| (0.5 * eps * (u - best)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let target = uniform_open_closed(rng) * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target <= acc {
            return i;
        }
    }
    // Rounding left `target` a hair above the running sum.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn value(r: &ReleaseValue) -> f64 {
        match r.estimate {
            Estimate::Scalar { value } => value,
            _ => unreachable!(),
        }
    }

    #[test]
    fn utilities_measure_rank_distance_to_each_cell() {
        // m = 4 over [0, 4]; cells hold 2, 1, 0, 1 records.
        let col = [0.0, 0.5, 1.0, 3.9];
        // Rank intervals [0,2], [2,3], [3,3], [3,4]; target 2.
        let u = quantile_utilities(&col, 0.0, 4.0, 0.5, 4);
        assert_eq!(u, vec![0.0, 0.0, -1.0, -1.0]);
        // Target 3.6.
        let u = quantile_utilities(&col, 0.0, 4.0, 0.9, 4);
        assert!((u[0] + 1.6).abs() < 1e-12 && (u[1] + 0.6).abs() < 1e-12);
        assert!((u[2] + 0.6).abs() < 1e-12 && u[3] == 0.0);
    }

    #[test]
    fn huge_epsilon_returns_minimal_rank_error_cell() {
        let spec = VariableSpec::numeric("x", 0.0, 1.0);
        let col: Vec<f64> = (0..1001).map(|i| i as f64 / 1000.0).collect();
        let mut rng = seeded_rng(1);
        let r = dp_quantile(&col, &spec, 1e6, 0.5, 100, 0.05, &mut rng).unwrap();
        let u = quantile_utilities(&col, 0.0, 1.0, 0.5, 100);
        let best = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let chosen = ((value(&r) * 100.0) - 0.5).round() as usize;
        assert_eq!(best, 0.0);
        assert_eq!(u[chosen], best);
    }

    #[test]
    fn uniform_median_within_five_hundredths() {
        use rand::Rng;
        let spec = VariableSpec::numeric("x", 0.0, 1.0);
        let mut data_rng = seeded_rng(2);
        let mut rng = seeded_rng(3);
        let mut hits = 0;
        for _ in 0..1000 {
            let col: Vec<f64> = (0..10_000).map(|_| data_rng.random::<f64>()).collect();
            let r = dp_quantile(
                &col,
                &spec,
                1.0,
                0.5,
                DEFAULT_QUANTILE_CANDIDATES,
                0.05,
                &mut rng,
            )
            .unwrap();
            if (value(&r) - 0.5).abs() <= 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 950, "hits {hits}");
    }

    #[test]
    fn constant_column_concentrates_on_its_cell() {
        let spec = VariableSpec::numeric("x", 0.0, 10.0);
        let col = vec![3.33; 200];
        let mut rng = seeded_rng(4);
        for eps in [5.0, 50.0] {
            let hits = (0..200)
                .filter(|_| {
                    let v =
                        value(&dp_quantile(&col, &spec, eps, 0.5, 100, 0.05, &mut rng).unwrap());
                    (v - 3.33).abs() <= 0.05
                })
                .count();
            assert!(hits >= 190, "eps {eps}: {hits}");
        }
    }

    #[test]
    fn level_outside_unit_interval_is_rejected() {
        let spec = VariableSpec::numeric("x", 0.0, 1.0);
        let mut rng = seeded_rng(5);
        for q in [0.0, 1.0, -0.2, 1.5] {
            assert!(dp_quantile(&[0.5], &spec, 1.0, q, 10, 0.05, &mut rng).is_err());
        }
    }
}
