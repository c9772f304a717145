//! Tabulates the a priori accuracy each statistic gets at a few values of
//! ε, then inverts one target accuracy back into the ε it costs.
//!
//! cargo run --release -p dprelease --example accuracy

use dprelease::{accuracy_to_epsilon, epsilon_to_accuracy, AccuracyContext, StatisticKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let alpha = 0.05;
    let ctx = AccuracyContext::new(10_000)
        .with_range(100.0)
        .with_bins(10)
        .with_grid(64)
        .with_candidates(1024);
    let kinds = [
        StatisticKind::Mean,
        StatisticKind::Histogram,
        StatisticKind::Cdf,
        StatisticKind::Quantile,
    ];

    println!(
        "n = {}, range 0..100, 10 bins, 64 cdf points, alpha = {alpha}",
        ctx.n
    );
    print!("{:>8}", "epsilon");
    for k in kinds {
        print!("{:>14}", k.as_str());
    }
    println!();
    for eps in [0.01, 0.05, 0.1, 0.5, 1.0] {
        print!("{eps:>8}");
        for k in kinds {
            print!("{:>14.5}", epsilon_to_accuracy(k, eps, alpha, &ctx)?);
        }
        println!();
    }

    let target = 0.5;
    let eps = accuracy_to_epsilon(StatisticKind::Mean, target, alpha, &ctx, 1.0)?;
    println!("a mean accurate to +/- {target} costs epsilon {eps:.5}");
    match accuracy_to_epsilon(StatisticKind::Mean, 0.001, alpha, &ctx, 1.0) {
        Ok(e) => println!("+/- 0.001 costs {e}"),
        Err(e) => println!("+/- 0.001: {e}"),
    }
    Ok(())
}
