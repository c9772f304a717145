//! Desk-scale experiments: a combined release over a synthetic census-like
//! table, and a trend fitted to differentially private survey means.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budgeter::{repartition, RepartitionInput};
use crate::composition::{CompositionRule, PrivacyParams};
use crate::engine::{compute, Dataset, EngineError};
use crate::mechanisms::{
    exact_cdf, exact_histogram, Column, Estimate, StatisticKind, VariableSpec,
};
use crate::request::{StatisticRequest, TargetSource};
use crate::rng::{child_rng, seeded_rng, NoiseRng};

/// `(name, lower, upper)` of the ten column archetypes.
const ARCHETYPES: [(&str, f64, f64); 10] = [
    ("age", 0.0, 100.0),
    ("income", 0.0, 500_000.0),
    ("hours", 0.0, 99.0),
    ("commute", 0.0, 200.0),
    ("household", 1.0, 20.0),
    ("education", 0.0, 24.0),
    ("rooms", 1.0, 20.0),
    ("property", 0.0, 2_000_000.0),
    ("flag", 0.0, 1.0),
    ("weeks", 0.0, 52.0),
];

fn draw(archetype: usize, variant: f64, rng: &mut NoiseRng) -> f64 {
    let v = variant;
    match archetype {
        0 => Normal::new(38.0 + 3.0 * v, 18.0)
            .unwrap()
            .sample(rng)
            .round(),
        1 => LogNormal::new(10.3 + 0.1 * v, 0.9)
            .unwrap()
            .sample(rng)
            .round(),
        2 => {
            if rng.random::<f64>() < 0.3 {
                0.0
            } else {
                Normal::new(40.0 - v, 10.0).unwrap().sample(rng).round()
            }
        }
        3 => Exp::new(1.0 / (20.0 + 4.0 * v))
            .unwrap()
            .sample(rng)
            .round(),
        4 => 1.0 + Poisson::new(1.5 + 0.2 * v).unwrap().sample(rng),
        5 => Binomial::new(24, 0.55 + 0.05 * v.min(4.0))
            .unwrap()
            .sample(rng) as f64,
        6 => 1.0 + Poisson::new(4.0 + 0.3 * v).unwrap().sample(rng),
        7 => LogNormal::new(12.0 + 0.1 * v, 0.7)
            .unwrap()
            .sample(rng)
            .round(),
        8 => f64::from(u8::from(rng.random::<f64>() < 0.2 + 0.15 * v)),
        _ => {
            if rng.random::<f64>() < 0.6 {
                52.0
            } else {
                rng.random_range(0.0..52.0f64).floor()
            }
        }
    }
}

/// Schema of the synthetic table: `variables` numeric columns cycling
/// through ten census-like archetypes.
pub fn synthetic_schema(variables: usize) -> Vec<VariableSpec> {
    (0..variables)
        .map(|i| {
            let (name, lo, hi) = ARCHETYPES[i % ARCHETYPES.len()];
            VariableSpec::numeric(format!("{name}_{}", i / ARCHETYPES.len()), lo, hi)
        })
        .collect()
}

/// A synthetic census-like table of `n` rows, reproducible from `seed`.
pub fn synthetic_pums(n: usize, variables: usize, seed: u64) -> Result<Dataset, EngineError> {
    let schema = synthetic_schema(variables);
    let mut parent = seeded_rng(seed);
    let mut rngs: Vec<NoiseRng> = (0..variables).map(|_| child_rng(&mut parent)).collect();
    let columns = rngs
        .par_iter_mut()
        .enumerate()
        .map(|(i, rng)| {
            let archetype = i % ARCHETYPES.len();
            let variant = (i / ARCHETYPES.len()) as f64;
            Column::Numeric((0..n).map(|_| draw(archetype, variant, rng)).collect())
        })
        .collect();
    Dataset::from_columns(format!("pums-{seed}"), schema, columns)
}

/// One mean, one histogram and one CDF per variable, ε left to repartition.
pub fn combined_requests(schema: &[VariableSpec]) -> Vec<StatisticRequest> {
    schema
        .iter()
        .flat_map(|v| {
            [
                StatisticKind::Mean,
                StatisticKind::Histogram,
                StatisticKind::Cdf,
            ]
            .into_iter()
            .map(|k| StatisticRequest::new(format!("{}-{}", v.name, k), v.name.clone(), k))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedConfig {
    pub n: usize,
    pub variables: usize,
    pub global: PrivacyParams,
    pub rule: CompositionRule,
}

impl Default for CombinedConfig {
    fn default() -> Self {
        CombinedConfig {
            n: 100_000,
            variables: 50,
            global: PrivacyParams {
                epsilon: 0.3,
                delta: 2f64.powi(-20),
            },
            rule: CompositionRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticError {
    pub id: String,
    pub variable: String,
    pub statistic: StatisticKind,
    pub epsilon: f64,
    pub normalized_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedReport {
    pub seed: u64,
    pub total: PrivacyParams,
    pub basic_total: PrivacyParams,
    pub statistics: Vec<StatisticError>,
}

impl CombinedReport {
    /// Average normalized error over the statistics of one kind.
    pub fn mean_error(&self, kind: StatisticKind) -> f64 {
        let errs: Vec<f64> = self
            .statistics
            .iter()
            .filter(|s| s.statistic == kind)
            .map(|s| s.normalized_mae)
            .collect();
        errs.iter().sum::<f64>() / errs.len().max(1) as f64
    }

    pub fn overall_error(&self) -> f64 {
        self.statistics
            .iter()
            .map(|s| s.normalized_mae)
            .sum::<f64>()
            / self.statistics.len().max(1) as f64
    }
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

/// Repartitions `config.global` over a mean, histogram and CDF per variable,
/// releases them all and scores each against the true value.
///
/// Errors are normalized to the statistic's natural scale: the variable's
/// range for a mean, `n` for histogram counts, and probability for a CDF.
pub fn combined_release(config: &CombinedConfig, seed: u64) -> Result<CombinedReport, EngineError> {
    let dataset = synthetic_pums(config.n, config.variables, seed)?;
    combined_release_on(&dataset, config, seed)
}

/// As [`combined_release`], on a dataset already built.
pub fn combined_release_on(
    dataset: &Dataset,
    config: &CombinedConfig,
    seed: u64,
) -> Result<CombinedReport, EngineError> {
    let plan = repartition(&RepartitionInput {
        global: config.global,
        sample: None,
        depositor_epsilon: None,
        n: dataset.n(),
        variables: dataset.schema().to_vec(),
        requests: combined_requests(dataset.schema()),
        rule: config.rule,
    })?;
    let mut parent = seeded_rng(seed ^ 0x005e_ed0f_d1ff);
    let mut rngs: Vec<NoiseRng> = plan
        .requests
        .iter()
        .map(|_| child_rng(&mut parent))
        .collect();
    let statistics = plan
        .requests
        .par_iter()
        .zip(rngs.par_iter_mut())
        .map(|(r, rng)| score(dataset, r, rng))
        .collect::<Result<_, _>>()?;
    Ok(CombinedReport {
        seed,
        total: plan.total,
        basic_total: plan.basic_total,
        statistics,
    })
}

fn score(
    dataset: &Dataset,
    r: &StatisticRequest,
    rng: &mut NoiseRng,
) -> Result<StatisticError, EngineError> {
    let target = r.resolve(dataset.schema())?;
    let TargetSource::Column(index) = target.source else {
        return Err(EngineError::Invalid(
            "evaluation runs on declared variables".into(),
        ));
    };
    let column = dataset.column(index);
    let spec = &target.spec;
    let (release, _) = compute(dataset, r, &target, rng)?;
    let n = dataset.n() as f64;
    let normalized_mae = match (&release.estimate, r.statistic) {
        (Estimate::Scalar { value }, StatisticKind::Mean) => {
            let xs = column.as_numeric().expect("numeric");
            let truth = xs.iter().sum::<f64>() / n;
            let (lo, hi) = spec.range().expect("numeric");
            (value - truth).abs() / (hi - lo)
        }
        (Estimate::Histogram { counts, .. }, StatisticKind::Histogram) => {
            let (_, truth) = exact_histogram(column, spec, &r.bin_spec(spec))?;
            mean_abs_diff(counts, &truth) / n
        }
        (Estimate::Cdf { values, .. }, StatisticKind::Cdf) => {
            let xs = column.as_numeric().expect("numeric");
            let (_, truth) = exact_cdf(xs, spec, r.grid_size())?;
            mean_abs_diff(values, &truth)
        }
        _ => return Err(EngineError::Invalid(format!("cannot score `{}`", r.id))),
    };
    Ok(StatisticError {
        id: r.id.clone(),
        variable: spec.name.clone(),
        statistic: r.statistic,
        epsilon: r.epsilon,
        normalized_mae,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendConfig {
    pub surveys: usize,
    /// Respondents per survey vary uniformly in `mean_n ± spread`.
    pub mean_n: usize,
    pub spread: usize,
    pub first_year: f64,
    pub last_year: f64,
    /// Share in favor at `first_year` and `last_year`.
    pub start_rate: f64,
    pub end_rate: f64,
    /// `ε` spent on each survey's mean.
    pub epsilon: f64,
}

impl Default for TrendConfig {
    fn default() -> Self {
        TrendConfig {
            surveys: 34,
            mean_n: 2000,
            spread: 500,
            first_year: 2004.0,
            last_year: 2017.0,
            start_rate: 0.31,
            end_rate: 0.62,
            epsilon: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRow {
    pub year: f64,
    pub n: usize,
    pub true_mean: f64,
    pub dp_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub seed: u64,
    pub surveys: Vec<SurveyRow>,
    /// Least-squares slope per year through the true survey means.
    pub true_slope: f64,
    pub dp_slope: f64,
}

impl TrendReport {
    pub fn relative_error(&self) -> f64 {
        ((self.dp_slope - self.true_slope) / self.true_slope).abs()
    }
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Simulates repeated binary-opinion surveys with a linear trend and
/// releases each survey's share in favor at `config.epsilon`.
pub fn survey_trend(config: &TrendConfig, seed: u64) -> Result<TrendReport, EngineError> {
    let mut rng = seeded_rng(seed);
    let spec = VariableSpec::boolean("favor");
    let span = config.last_year - config.first_year;
    let mut surveys = Vec::with_capacity(config.surveys);
    for s in 0..config.surveys {
        let year = config.first_year + span * s as f64 / (config.surveys.max(2) - 1) as f64;
        let rate = config.start_rate
            + (config.end_rate - config.start_rate) * (year - config.first_year) / span;
        let n = rng.random_range(config.mean_n - config.spread..=config.mean_n + config.spread);
        let column: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(rng.random::<f64>() < rate)))
            .collect();
        let true_mean = column.iter().sum::<f64>() / n as f64;
        let dataset = Dataset::from_columns(
            format!("survey-{s}"),
            vec![spec.clone()],
            vec![Column::Numeric(column)],
        )?;
        let request = StatisticRequest::new("favor-mean", "favor", StatisticKind::Mean)
            .with_epsilon(config.epsilon);
        let target = request.resolve(dataset.schema())?;
        let (release, _) = compute(&dataset, &request, &target, &mut rng)?;
        let Estimate::Scalar { value } = release.estimate else {
            unreachable!("a mean is a scalar")
        };
        surveys.push(SurveyRow {
            year,
            n,
            true_mean,
            dp_mean: value,
        });
    }
    let years: Vec<f64> = surveys.iter().map(|s| s.year).collect();
    let truth: Vec<f64> = surveys.iter().map(|s| s.true_mean).collect();
    let noisy: Vec<f64> = surveys.iter().map(|s| s.dp_mean).collect();
    Ok(TrendReport {
        seed,
        true_slope: ols_slope(&years, &truth),
        dp_slope: ols_slope(&years, &noisy),
        surveys,
    })
}
