use rand::{CryptoRng, RngCore};

use super::mean::numeric_range;
use super::{
    check_alpha, check_epsilon, clamp_value, Estimate, Laplace, MechanismError, ReleaseValue,
    StatisticKind, VariableSpec,
};
use crate::accuracy::{epsilon_to_accuracy, AccuracyContext};

/// Grid points `a + j·(b − a)/g` for `j = 1..=g`, and the cell index of each
/// value: cell `j` is `(t_j, t_{j+1}]`, with the first cell closed at `a`.
struct Grid {
    lower: f64,
    upper: f64,
    size: usize,
}

impl Grid {
    fn points(&self) -> Vec<f64> {
        let w = (self.upper - self.lower) / self.size as f64;
        (1..=self.size)
            .map(|j| {
                if j == self.size {
                    self.upper
                } else {
                    self.lower + w * j as f64
                }
            })
            .collect()
    }

    fn cell_counts(&self, column: &[f64]) -> Vec<u64> {
        let g = self.size;
        let per_unit = g as f64 / (self.upper - self.lower);
        let mut cells = vec![0u64; g];
        for &x in column {
            let x = clamp_value(x, self.lower, self.upper);
            let pos = ((x - self.lower) * per_unit).ceil() as usize;
            cells[pos.saturating_sub(1).min(g - 1)] += 1;
        }
        cells
    }
}

/// Exact empirical CDF on the grid, for evaluation.
pub(crate) fn exact_cdf(
    column: &[f64],
    spec: &VariableSpec,
    grid: usize,
) -> Result<(Vec<f64>, Vec<f64>), MechanismError> {
    let (lower, upper) = numeric_range(spec, StatisticKind::Cdf)?;
    let grid = Grid {
        lower,
        upper,
        size: grid,
    };
    let n = column.len() as f64;
    let mut acc = 0u64;
    let values = grid
        .cell_counts(column)
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect();
    Ok((grid.points(), values))
}

/// Pool-adjacent-violators: the least-squares non-decreasing fit.
///
/// Non-expansive in sup norm towards any non-decreasing target, so it never
/// worsens the worst-case error of an estimate of a CDF.
pub fn isotonic_non_decreasing(values: &[f64]) -> Vec<f64> {
    // (block mean, block length)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        let mut mean = v;
        let mut len = 1usize;
        while let Some(&(prev_mean, prev_len)) = blocks.last() {
            if prev_mean <= mean {
                break;
            }
            blocks.pop();
            mean = (prev_mean * prev_len as f64 + mean * len as f64) / (prev_len + len) as f64;
            len += prev_len;
        }
        blocks.push((mean, len));
    }
    let mut out = Vec::with_capacity(values.len());
    for (mean, len) in blocks {
        out.extend(std::iter::repeat_n(mean, len));
    }
    // Block means of a sorted sequence can still differ in the last ulp.
    for i in 1..out.len() {
        if out[i] < out[i - 1] {
            out[i] = out[i - 1];
        }
    }
    out
}

/// CDF release over a grid of `g = 2^L` equal cells using a dyadic tree.
///
/// Levels `1..=L` split the range into `2, 4, ..., g` nodes. Each level is a
/// histogram with L1 sensitivity 2, so giving every node `Lap(2L/ε)` noise
/// makes the whole tree `ε`-DP. Each prefix count is a sum of at most `L`
/// nodes; the root is `n`, which is public. The fractions are then made
/// non-decreasing and clamped to `[0, 1]`, with the last point fixed at 1.
pub fn dp_cdf<R: RngCore + CryptoRng + ?Sized>(
    column: &[f64],
    spec: &VariableSpec,
    eps: f64,
    grid: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<ReleaseValue, MechanismError> {
    check_epsilon(eps)?;
    check_alpha(alpha)?;
    let (lower, upper) = numeric_range(spec, StatisticKind::Cdf)?;
    if grid < 2 || !grid.is_power_of_two() {
        return Err(MechanismError::InvalidParameter(format!(
            "CDF grid size must be a power of two >= 2, got {grid}"
        )));
    }
    if column.is_empty() {
        return Err(MechanismError::EmptyData);
    }
    let levels = grid.trailing_zeros() as usize;
    let grid = Grid {
        lower,
        upper,
        size: grid,
    };
    let cells = grid.cell_counts(column);
    let noise = Laplace::new(2.0 * levels as f64 / eps)?;

    // tree[l][i]: noisy count of node i at level l+1 (2^(l+1) nodes, each
    // covering g >> (l+1) cells).
    let g = grid.size;
    let mut tree: Vec<Vec<f64>> = Vec::with_capacity(levels);
    for level in 1..=levels {
        let width = g >> level;
        let nodes = (0..1usize << level)
            .map(|i| {
                let exact: u64 = cells[i * width..(i + 1) * width].iter().sum();
                exact as f64 + noise.sample(rng)
            })
            .collect();
        tree.push(nodes);
    }

    let n = column.len() as f64;
    let mut fractions: Vec<f64> = (1..g)
        .map(|j| {
            let mut start = 0usize;
            let mut total = 0.0;
            for level in 1..=levels {
                let width = g >> level;
                if j & width != 0 {
                    total += tree[level - 1][start / width];
                    start += width;
                }
            }
            total / n
        })
        .collect();
    fractions = isotonic_non_decreasing(&fractions)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    fractions.push(1.0);

    let ctx = AccuracyContext::new(column.len()).with_grid(g);
    let accuracy = epsilon_to_accuracy(StatisticKind::Cdf, eps, alpha, &ctx)
        .map_err(|e| MechanismError::InvalidParameter(e.to_string()))?;
    Ok(ReleaseValue {
        kind: StatisticKind::Cdf,
        estimate: Estimate::Cdf {
            points: grid.points(),
            values: fractions,
        },
        epsilon: eps,
        delta: 0.0,
        accuracy,
        confidence: 1.0 - alpha,
    })
}
