//! Releases a mean, histogram and CDF for every column of a synthetic
//! 100,000-row census-like table under ε = 0.3, δ = 2^-20, and prints the
//! normalized mean absolute error of each kind.
//!
//! cargo run --release -p dprelease --example combined_release [seeds]

use std::time::Instant;

use dprelease::evaluation::{combined_release, CombinedConfig};
use dprelease::StatisticKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(3);
    let config = CombinedConfig::default();
    println!(
        "n = {}, {} variables, global {:?}",
        config.n, config.variables, config.global
    );
    println!(
        "{:>4}  {:>10}  {:>10}  {:>10}  {:>8}  {:>6}",
        "seed", "mean", "histogram", "cdf", "eps_i", "secs"
    );
    for seed in 0..seeds {
        let start = Instant::now();
        let report = combined_release(&config, seed)?;
        println!(
            "{seed:>4}  {:>10.5}  {:>10.5}  {:>10.5}  {:>8.5}  {:>6.2}",
            report.mean_error(StatisticKind::Mean),
            report.mean_error(StatisticKind::Histogram),
            report.mean_error(StatisticKind::Cdf),
            report.statistics[0].epsilon,
            start.elapsed().as_secs_f64()
        );
        if seed == 0 {
            println!(
                "      composed epsilon {:.4} (basic composition would allow only {:.4} per statistic)",
                report.total.epsilon,
                config.global.epsilon / report.statistics.len() as f64
            );
        }
    }
    Ok(())
}
