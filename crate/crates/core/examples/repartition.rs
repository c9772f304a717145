//! Splits a global budget across a mixed list of statistics, holding one of
//! them at a target accuracy, and prints the resulting plan as JSON.
//!
//! cargo run --release -p dprelease --example repartition

use dprelease::budgeter::{repartition, RepartitionInput};
use dprelease::{CompositionRule, PrivacyParams, StatisticKind, StatisticRequest, VariableSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let input = RepartitionInput {
        global: PrivacyParams::new(1.0, 1e-6)?,
        sample: None,
        depositor_epsilon: Some(0.8),
        n: 20_000,
        variables: vec![
            VariableSpec::numeric("age", 0.0, 100.0),
            VariableSpec::numeric("income", 0.0, 250_000.0),
            VariableSpec::categorical("tenure", ["owned", "rented", "other"]),
        ],
        requests: vec![
            StatisticRequest::new("age-mean", "age", StatisticKind::Mean).held_at_accuracy(0.5),
            StatisticRequest::new("income-cdf", "income", StatisticKind::Cdf),
            StatisticRequest::new("income-median", "income", StatisticKind::Quantile),
            StatisticRequest::new("tenure", "tenure", StatisticKind::Histogram),
        ],
        rule: CompositionRule::default(),
    };
    let plan = repartition(&input)?;
    for r in &plan.requests {
        println!(
            "{:>14}  epsilon {:.5}  accuracy {:.5}",
            r.id,
            r.epsilon,
            r.accuracy.unwrap_or(f64::NAN)
        );
    }
    println!(
        "total epsilon {:.5} (basic composition would need {:.5})",
        plan.total.epsilon, plan.basic_total.epsilon
    );
    println!("{}", serde_json::to_string_pretty(&plan)?);
    Ok(())
}
