//! Fits a trend line through 34 synthetic opinion surveys whose share in
//! favor grows linearly, once on the true means and once on means released
//! at ε = 0.01 each.
//!
//! cargo run --release -p dprelease --example survey_trend [seed]

use dprelease::evaluation::{survey_trend, TrendConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(2017);
    let report = survey_trend(&TrendConfig::default(), seed)?;
    println!("{:>8}  {:>5}  {:>8}  {:>8}", "year", "n", "true", "dp");
    for s in &report.surveys {
        println!(
            "{:>8.2}  {:>5}  {:>8.4}  {:>8.4}",
            s.year, s.n, s.true_mean, s.dp_mean
        );
    }
    println!(
        "slope per year: true {:.5}, dp {:.5} (relative error {:.1}%)",
        report.true_slope,
        report.dp_slope,
        100.0 * report.relative_error()
    );

    let hits = (0..100)
        .map(|s| survey_trend(&TrendConfig::default(), s).map(|r| r.relative_error() <= 0.25))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|&ok| ok)
        .count();
    println!("slope within 25% of the truth in {hits} of 100 seeds");
    Ok(())
}
