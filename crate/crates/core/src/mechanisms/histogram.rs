use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::{
    check_alpha, check_epsilon, clamp_value, Column, Estimate, Laplace, MechanismError,
    ReleaseValue, StatisticKind, VariableKind, VariableSpec,
};
use crate::accuracy::{epsilon_to_accuracy, AccuracyContext};

/// How a histogram partitions the variable's domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BinSpec {
    /// `count` equal-width bins over the declared numeric range.
    Uniform { count: usize },
    /// Explicit edges; must start at the lower and end at the upper bound.
    Edges { edges: Vec<f64> },
    /// One bin per declared category plus the catch-all bin.
    Categories,
}

impl BinSpec {
    /// Sensible default for a variable: its categories, two bins for a
    /// boolean, ten equal-width bins otherwise.
    pub fn default_for(spec: &VariableSpec) -> Self {
        match spec.kind {
            VariableKind::Categorical { .. } => BinSpec::Categories,
            VariableKind::Boolean => BinSpec::Uniform { count: 2 },
            VariableKind::Numeric { .. } => BinSpec::Uniform { count: 10 },
        }
    }

    /// Number of bins this spec produces for `spec`.
    pub fn bin_count(&self, spec: &VariableSpec) -> Result<usize, MechanismError> {
        Ok(Partition::new(self, spec)?.len())
    }
}

enum Partition {
    Uniform {
        lower: f64,
        upper: f64,
        count: usize,
    },
    Edges(Vec<f64>),
    Categories(usize),
}

impl Partition {
    fn new(bins: &BinSpec, spec: &VariableSpec) -> Result<Self, MechanismError> {
        spec.validate()?;
        let bad = |msg: String| Err(MechanismError::InvalidParameter(msg));
        match (bins, &spec.kind) {
            (BinSpec::Categories, VariableKind::Categorical { categories }) => {
                Ok(Partition::Categories(categories.len() + 1))
            }
            (BinSpec::Categories, _) => bad(format!(
                "variable `{}` is not categorical; use uniform or explicit bins",
                spec.name
            )),
            (_, VariableKind::Categorical { .. }) => bad(format!(
                "categorical variable `{}` must use its category bins",
                spec.name
            )),
            (BinSpec::Uniform { count }, _) => {
                let (lower, upper) = spec.range().expect("numeric");
                if *count == 0 {
                    return bad("histogram needs at least one bin".into());
                }
                Ok(Partition::Uniform {
                    lower,
                    upper,
                    count: *count,
                })
            }
            (BinSpec::Edges { edges }, _) => {
                let (lower, upper) = spec.range().expect("numeric");
                if edges.len() < 2 {
                    return bad("explicit bins need at least two edges".into());
                }
                if edges[0] != lower || edges[edges.len() - 1] != upper {
                    return bad(format!(
                        "bins [{}, {}] do not cover the declared range [{lower}, {upper}]",
                        edges[0],
                        edges[edges.len() - 1]
                    ));
                }
                if edges
                    .windows(2)
                    .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
                {
                    return bad("bin edges must be strictly increasing".into());
                }
                Ok(Partition::Edges(edges.clone()))
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            Partition::Uniform { count, .. } => *count,
            Partition::Edges(e) => e.len() - 1,
            Partition::Categories(k) => *k,
        }
    }

    fn labels(&self, spec: &VariableSpec) -> Vec<String> {
        let interval = |a: f64, b: f64, last: bool| {
            if last {
                format!("[{a}, {b}]")
            } else {
                format!("[{a}, {b})")
            }
        };
        match self {
            Partition::Uniform {
                lower,
                upper,
                count,
            } => {
                let w = (upper - lower) / *count as f64;
                (0..*count)
                    .map(|i| {
                        let a = lower + w * i as f64;
                        let b = if i + 1 == *count {
                            *upper
                        } else {
                            lower + w * (i + 1) as f64
                        };
                        interval(a, b, i + 1 == *count)
                    })
                    .collect()
            }
            Partition::Edges(e) => (0..e.len() - 1)
                .map(|i| interval(e[i], e[i + 1], i + 2 == e.len()))
                .collect(),
            Partition::Categories(_) => spec.category_labels().expect("categorical"),
        }
    }

    fn counts(&self, column: &Column) -> Result<Vec<f64>, MechanismError> {
        let mut counts = vec![0u64; self.len()];
        match (self, column) {
            (
                Partition::Uniform {
                    lower,
                    upper,
                    count,
                },
                Column::Numeric(xs),
            ) => {
                let k = *count;
                let per_unit = k as f64 / (upper - lower);
                for &x in xs {
                    let x = clamp_value(x, *lower, *upper);
                    let i = (((x - lower) * per_unit) as usize).min(k - 1);
                    counts[i] += 1;
                }
            }
            (Partition::Edges(edges), Column::Numeric(xs)) => {
                let interior = &edges[1..edges.len() - 1];
                let (lower, upper) = (edges[0], edges[edges.len() - 1]);
                for &x in xs {
                    let x = clamp_value(x, lower, upper);
                    counts[interior.partition_point(|&e| e <= x)] += 1;
                }
            }
            (Partition::Categories(k), Column::Categorical(idx)) => {
                for &i in idx {
                    counts[(i as usize).min(k - 1)] += 1;
                }
            }
            _ => {
                return Err(MechanismError::InvalidParameter(
                    "column type does not match the variable kind".into(),
                ))
            }
        }
        Ok(counts.into_iter().map(|c| c as f64).collect())
    }
}

/// Exact bin counts, without noise. Used for evaluation against releases.
pub(crate) fn exact_histogram(
    column: &Column,
    spec: &VariableSpec,
    bins: &BinSpec,
) -> Result<(Vec<String>, Vec<f64>), MechanismError> {
    let partition = Partition::new(bins, spec)?;
    Ok((partition.labels(spec), partition.counts(column)?))
}

/// Laplace histogram with per-bin noise `Lap(2/ε)`.
///
/// Replacing one record moves one unit between at most two bins, so the
/// count vector has L1 sensitivity 2. Negative noisy counts are raised to 0.
pub fn dp_histogram<R: RngCore + CryptoRng + ?Sized>(
    column: &Column,
    spec: &VariableSpec,
    eps: f64,
    bins: &BinSpec,
    alpha: f64,
    rng: &mut R,
) -> Result<ReleaseValue, MechanismError> {
    check_epsilon(eps)?;
    check_alpha(alpha)?;
    let partition = Partition::new(bins, spec)?;
    if column.is_empty() {
        return Err(MechanismError::EmptyData);
    }
    let noise = Laplace::new(2.0 / eps)?;
    let counts = partition
        .counts(column)?
        .into_iter()
        .map(|c| (c + noise.sample(rng)).max(0.0))
        .collect();
    let ctx = AccuracyContext::new(column.len()).with_bins(partition.len());
    let accuracy = epsilon_to_accuracy(StatisticKind::Histogram, eps, alpha, &ctx)
        .map_err(|e| MechanismError::InvalidParameter(e.to_string()))?;
    Ok(ReleaseValue {
        kind: StatisticKind::Histogram,
        estimate: Estimate::Histogram {
            labels: partition.labels(spec),
            counts,
        },
        epsilon: eps,
        delta: 0.0,
        accuracy,
        confidence: 1.0 - alpha,
    })
}
