//! Command-line driver. Each subcommand reads files, calls one library
//! function and writes the result.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dprelease::budgeter::{repartition, Actor, RepartitionInput, SampleInfo};
use dprelease::engine::{BudgetConfig, EngineError, Registry, ReleaseBatch};
use dprelease::evaluation::{combined_release, survey_trend, CombinedConfig, TrendConfig};
use dprelease::rng::{secure_rng, seeded_rng};
use dprelease::{
    CompositionRule, NoiseRng, PrivacyParams, StatisticKind, StatisticRequest, VariableSpec,
};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ServiceConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "dprelease",
    version,
    about = "Differentially private statistical release"
)]
pub struct Cli {
    /// Allow --seed; outputs become reproducible and must not be published.
    #[arg(long, global = true)]
    pub test_mode: bool,
    /// Noise seed, honored only with --test-mode.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a CSV file under a dataset id.
    Ingest {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        csv: PathBuf,
        /// JSON list of variable specs.
        #[arg(long)]
        schema: PathBuf,
        /// Replace the data of an existing dataset, keeping its ledger.
        #[arg(long)]
        force: bool,
    },
    /// Split a budget across the statistics in a requests file and print the plan.
    Budget {
        /// JSON with `requests` and optionally `global`, `sample`,
        /// `depositor_epsilon`, `n`, `variables` and `rule`.
        #[arg(long)]
        requests: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        depositor_epsilon: Option<f64>,
        /// Take `n` and the variables from a registered dataset.
        #[arg(long, requires = "dataset")]
        data_dir: Option<PathBuf>,
        #[arg(long, requires = "data_dir")]
        dataset: Option<String>,
        /// Store the budget with the dataset.
        #[arg(long, requires = "dataset")]
        save: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Release a plan against a registered dataset and write its metadata file.
    Release {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        dataset: String,
        /// A plan printed by `budget`, or any JSON with `requests`.
        #[arg(long)]
        plan: PathBuf,
        /// `depositor`, `semi_trusted:<user>` or `untrusted:<user>`.
        #[arg(long, default_value = "depositor")]
        actor: String,
        /// Where to write the metadata file the actor can see.
        #[arg(long)]
        metadata_out: Option<PathBuf>,
    },
    /// Run an evaluation experiment and write CSV tables plus a plotting script.
    Evaluate {
        #[command(subcommand)]
        experiment: Experiment,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// Mean, histogram and CDF of every variable of a synthetic census extract.
    Combined {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        runs: u64,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        variables: usize,
        #[arg(long, default_value_t = 0.3)]
        epsilon: f64,
        #[arg(long, default_value_t = 2f64.powi(-20))]
        delta: f64,
    },
    /// Trend line through a series of synthetic opinion surveys.
    Trend {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: u64,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
    },
}

/// Requests file accepted by `budget`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RequestsFile {
    #[serde(default)]
    global: Option<PrivacyParams>,
    #[serde(default)]
    sample: Option<SampleInfo>,
    #[serde(default)]
    depositor_epsilon: Option<f64>,
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    variables: Option<Vec<VariableSpec>>,
    requests: Vec<StatisticRequest>,
    #[serde(default)]
    rule: Option<CompositionRule>,
}

/// Plan file accepted by `release`; other fields are ignored.
#[derive(Debug, Deserialize)]
struct PlanFile {
    #[serde(default)]
    batch_id: Option<String>,
    requests: Vec<StatisticRequest>,
}

pub fn parse_actor(s: &str) -> Result<Actor, CliError> {
    match s.split_once(':') {
        None if s == "depositor" => Ok(Actor::depositor()),
        Some(("semi_trusted", u)) if !u.is_empty() => Ok(Actor::semi_trusted(u)),
        Some(("untrusted", u)) if !u.is_empty() => Ok(Actor::untrusted(u)),
        _ => Err(user(format!(
            "actor `{s}` is not `depositor`, `semi_trusted:<user>` or `untrusted:<user>`"
        ))),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(internal)?;
    match out {
        Some(path) => {
            fs::write(path, text + "\n").map_err(|e| user(format!("{}: {e}", path.display())))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

impl Cli {
    /// The noise source: seeded in test mode, from the OS otherwise.
    fn rng(&self) -> Result<NoiseRng, CliError> {
        match (self.seed, self.test_mode) {
            (Some(_), false) => Err(user("--seed is only accepted together with --test-mode")),
            (Some(seed), true) => Ok(seeded_rng(seed)),
            (None, _) => Ok(secure_rng()),
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut rng = cli.rng()?;
    match &cli.command {
        Command::Ingest {
            data_dir,
            id,
            csv,
            schema,
            force,
        } => {
            let schema: Vec<VariableSpec> = read_json(schema)?;
            let report = Registry::new(data_dir)?.ingest(id, csv, schema, *force)?;
            println!("n={}", report.n);
            if report.total_clamped() > 0 {
                println!("clamped={}", report.total_clamped());
            }
            Ok(())
        }
        Command::Budget {
            requests,
            epsilon,
            delta,
            depositor_epsilon,
            data_dir,
            dataset,
            save,
            out,
        } => {
            let file: RequestsFile = read_json(requests)?;
            let global = match (epsilon, delta, file.global) {
                (Some(e), d, g) => {
                    PrivacyParams::new(*e, d.or(g.map(|g| g.delta)).unwrap_or(0.0)).map_err(user)?
                }
                (None, Some(d), Some(g)) => PrivacyParams::new(g.epsilon, *d).map_err(user)?,
                (None, None, Some(g)) => g,
                _ => {
                    return Err(user(
                        "no global budget: pass --epsilon or put `global` in the requests file",
                    ))
                }
            };
            let depositor_epsilon = depositor_epsilon.or(file.depositor_epsilon);
            let (n, variables) = match (data_dir, dataset) {
                (Some(dir), Some(id)) => {
                    let registry = Registry::new(dir)?;
                    let variables = registry.schema(id)?;
                    (registry.record_count(id)?, variables)
                }
                _ => (
                    file.n
                        .ok_or_else(|| user("the requests file needs `n` or pass --dataset"))?,
                    file.variables.ok_or_else(|| {
                        user("the requests file needs `variables` or pass --dataset")
                    })?,
                ),
            };
            let rule = file.rule.unwrap_or_default();
            let plan = repartition(&RepartitionInput {
                global,
                sample: file.sample,
                depositor_epsilon,
                n,
                variables,
                requests: file.requests,
                rule,
            })
            .map_err(|e| user(format!("{} ({})", e, e.code())))?;
            if *save {
                let (Some(dir), Some(id)) = (data_dir, dataset) else {
                    unreachable!()
                };
                let mut budget = BudgetConfig::new(global);
                budget.sample = file.sample;
                budget.depositor_epsilon = depositor_epsilon;
                budget.rule = rule;
                Registry::new(dir)?.set_budget(id, &budget)?;
            }
            for w in &plan.warnings {
                eprintln!("warning: {w}");
            }
            emit(&plan, out.as_deref())
        }
        Command::Release {
            data_dir,
            dataset,
            plan,
            actor,
            metadata_out,
        } => {
            let actor = parse_actor(actor)?;
            let plan: PlanFile = read_json(plan)?;
            let handle = Registry::new(data_dir)?.open(dataset)?;
            let mut batch = ReleaseBatch::new(plan.requests);
            batch.batch_id = plan.batch_id;
            let outcome = handle.release(&actor, &batch, &mut rng)?;
            emit(&outcome, None)?;
            if let Some(path) = metadata_out {
                let file = match &actor.user {
                    Some(u) if actor.tier == dprelease::budgeter::Tier::SemiTrusted => {
                        handle.user_metadata(u)?
                    }
                    _ => handle.public_metadata()?,
                };
                emit(&file, Some(path))?;
            }
            Ok(())
        }
        Command::Evaluate { experiment } => {
            let base = match (cli.test_mode, cli.seed) {
                (true, Some(s)) => s,
                _ => rng.next_u64() >> 1,
            };
            match experiment {
                Experiment::Combined {
                    out,
                    runs,
                    n,
                    variables,
                    epsilon,
                    delta,
                } => {
                    let config = CombinedConfig {
                        n: *n,
                        variables: *variables,
                        global: PrivacyParams::new(*epsilon, *delta).map_err(user)?,
                        ..CombinedConfig::default()
                    };
                    evaluate_combined(&config, base, *runs, out)
                }
                Experiment::Trend { out, runs, epsilon } => {
                    let config = TrendConfig {
                        epsilon: *epsilon,
                        ..TrendConfig::default()
                    };
                    evaluate_trend(&config, base, *runs, out)
                }
            }
        }
        Command::Serve { config } => {
            let config = ServiceConfig::load(config).map_err(user)?;
            let runtime = tokio::runtime::Runtime::new().map_err(internal)?;
            runtime
                .block_on(crate::api::serve(config))
                .map_err(internal)
        }
    }
}

fn create_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| user(format!("{}: {e}", out.display())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct StatisticRow<'a> {
    seed: u64,
    id: &'a str,
    variable: &'a str,
    statistic: StatisticKind,
    epsilon: f64,
    normalized_mae: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    seed: u64,
    statistic: StatisticKind,
    mean_normalized_mae: f64,
}

const KINDS: [StatisticKind; 3] = [
    StatisticKind::Mean,
    StatisticKind::Histogram,
    StatisticKind::Cdf,
];

fn evaluate_combined(
    config: &CombinedConfig,
    base: u64,
    runs: u64,
    out: &Path,
) -> Result<(), CliError> {
    create_dir(out)?;
    let mut stats = csv_writer(&out.join("statistics.csv"))?;
    let mut summary = csv_writer(&out.join("summary.csv"))?;
    let mut totals = [0.0; 3];
    for seed in base..base + runs {
        let report = combined_release(config, seed)?;
        for s in &report.statistics {
            stats
                .serialize(StatisticRow {
                    seed,
                    id: &s.id,
                    variable: &s.variable,
                    statistic: s.statistic,
                    epsilon: s.epsilon,
                    normalized_mae: s.normalized_mae,
                })
                .map_err(internal)?;
        }
        for (t, kind) in totals.iter_mut().zip(KINDS) {
            let e = report.mean_error(kind);
            *t += e / runs as f64;
            summary
                .serialize(SummaryRow {
                    seed,
                    statistic: kind,
                    mean_normalized_mae: e,
                })
                .map_err(internal)?;
        }
    }
    stats.flush().map_err(internal)?;
    summary.flush().map_err(internal)?;
    fs::write(out.join("plot_combined.py"), PLOT_COMBINED).map_err(internal)?;
    for (t, kind) in totals.iter().zip(KINDS) {
        println!("{kind}: mean normalized MAE {t:.4}");
    }
    println!("tables written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct SlopeRow {
    seed: u64,
    true_slope: f64,
    dp_slope: f64,
    relative_error: f64,
}

#[derive(Serialize)]
struct SurveyOut {
    seed: u64,
    year: f64,
    n: usize,
    true_mean: f64,
    dp_mean: f64,
}

fn evaluate_trend(config: &TrendConfig, base: u64, runs: u64, out: &Path) -> Result<(), CliError> {
    create_dir(out)?;
    let mut surveys = csv_writer(&out.join("surveys.csv"))?;
    let mut slopes = csv_writer(&out.join("slopes.csv"))?;
    let mut within = 0;
    for seed in base..base + runs {
        let report = survey_trend(config, seed)?;
        for s in &report.surveys {
            surveys
                .serialize(SurveyOut {
                    seed,
                    year: s.year,
                    n: s.n,
                    true_mean: s.true_mean,
                    dp_mean: s.dp_mean,
                })
                .map_err(internal)?;
        }
        within += u64::from(report.relative_error() <= 0.25);
        slopes
            .serialize(SlopeRow {
                seed,
                true_slope: report.true_slope,
                dp_slope: report.dp_slope,
                relative_error: report.relative_error(),
            })
            .map_err(internal)?;
    }
    surveys.flush().map_err(internal)?;
    slopes.flush().map_err(internal)?;
    fs::write(out.join("plot_trend.py"), PLOT_TREND).map_err(internal)?;
    println!("slope within 25% in {within} of {runs} runs");
    println!("tables written to {}", out.display());
    Ok(())
}

const PLOT_COMBINED: &str = r#"# Box plot of normalized MAE per statistic kind.
import sys
import pandas as pd
import matplotlib.pyplot as plt

d = sys.argv[1] if len(sys.argv) > 1 else "."
stats = pd.read_csv(f"{d}/statistics.csv")
kinds = ["mean", "histogram", "cdf"]
plt.boxplot([stats[stats.statistic == k].normalized_mae for k in kinds], labels=kinds)
plt.ylabel("normalized mean absolute error")
plt.savefig(f"{d}/combined.png", dpi=150)
"#;

const PLOT_TREND: &str = r#"# True and released survey means with fitted lines, first run.
import sys
import numpy as np
import pandas as pd
import matplotlib.pyplot as plt

d = sys.argv[1] if len(sys.argv) > 1 else "."
s = pd.read_csv(f"{d}/surveys.csv")
s = s[s.seed == s.seed.iloc[0]]
for col, style in [("true_mean", "o"), ("dp_mean", "x")]:
    plt.plot(s.year, s[col], style, label=col)
    k, b = np.polyfit(s.year, s[col], 1)
    plt.plot(s.year, k * s.year + b)
plt.legend()
plt.xlabel("year")
plt.ylabel("share in favor")
plt.savefig(f"{d}/trend.png", dpi=150)
"#;
