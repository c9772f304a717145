//! Runs each release mechanism once on a synthetic column of ages and
//! prints the noisy value next to the truth.
//!
//! cargo run --release -p dprelease --example mechanisms

use dprelease::mechanisms::{dp_cdf, dp_histogram, dp_mean, dp_quantile, BinSpec, Column};
use dprelease::rng::seeded_rng;
use dprelease::{Estimate, VariableSpec};
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = seeded_rng(7);
    let spec = VariableSpec::numeric("age", 0.0, 100.0);
    let ages: Vec<f64> = (0..5000)
        .map(|_| (rng.random::<f64>() * 60.0 + rng.random::<f64>() * 30.0).floor())
        .collect();
    let (eps, alpha) = (0.5, 0.05);

    let truth = ages.iter().sum::<f64>() / ages.len() as f64;
    let r = dp_mean(&ages, &spec, eps, alpha, &mut rng)?;
    if let Estimate::Scalar { value } = r.estimate {
        println!(
            "mean      true {truth:.3}  released {value:.3}  (+/- {:.3} at 95%)",
            r.accuracy
        );
    }

    let r = dp_histogram(
        &Column::Numeric(ages.clone()),
        &spec,
        eps,
        &BinSpec::Uniform { count: 5 },
        alpha,
        &mut rng,
    )?;
    if let Estimate::Histogram { labels, counts } = &r.estimate {
        println!("histogram (+/- {:.1} counts in every bin)", r.accuracy);
        for (l, c) in labels.iter().zip(counts) {
            println!("  {l:>14}  {c:8.1}");
        }
    }

    let r = dp_cdf(&ages, &spec, eps, 16, alpha, &mut rng)?;
    if let Estimate::Cdf { points, values } = &r.estimate {
        println!("cdf (+/- {:.4} at each point)", r.accuracy);
        for (p, v) in points.iter().zip(values).step_by(4) {
            let t = ages.iter().filter(|&&a| a <= *p).count() as f64 / ages.len() as f64;
            println!("  P(age <= {p:5.1})  true {t:.4}  released {v:.4}");
        }
    }

    let mut sorted = ages.clone();
    sorted.sort_by(f64::total_cmp);
    let r = dp_quantile(&ages, &spec, eps, 0.5, 1024, alpha, &mut rng)?;
    if let Estimate::Scalar { value } = r.estimate {
        println!(
            "median    true {:.3}  released {value:.3}  (rank within {:.4} of 0.5)",
            sorted[sorted.len() / 2],
            r.accuracy
        );
    }
    Ok(())
}
