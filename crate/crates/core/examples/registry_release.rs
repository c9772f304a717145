//! Ingests a CSV file into a registry, sets its budget, releases a batch as
//! the depositor and prints the public metadata file.
//!
//! cargo run --release -p dprelease --example registry_release

use dprelease::budgeter::Actor;
use dprelease::engine::{BudgetConfig, Registry, ReleaseBatch};
use dprelease::request::Transform;
use dprelease::rng::secure_rng;
use dprelease::{PrivacyParams, StatisticKind, StatisticRequest, VariableSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let csv = dir.path().join("households.csv");
    let mut text = String::from("rooms,income,tenure\n");
    for i in 0..2000 {
        text.push_str(&format!(
            "{},{},{}\n",
            1 + i % 7,
            (i * 613) % 180_000,
            ["owned", "rented"][i % 2]
        ));
    }
    std::fs::write(&csv, text)?;

    let schema = vec![
        VariableSpec::numeric("rooms", 1.0, 10.0).with_description("rooms in the dwelling"),
        VariableSpec::numeric("income", 0.0, 200_000.0),
        VariableSpec::categorical("tenure", ["owned", "rented"]),
    ];
    let registry = Registry::new(dir.path().join("registry"))?;
    let report = registry.ingest("households", &csv, schema, false)?;
    println!(
        "ingested {} rows, {} values clamped",
        report.n,
        report.total_clamped()
    );
    registry.set_budget(
        "households",
        &BudgetConfig::new(PrivacyParams::new(1.0, 1e-6)?).with_depositor_epsilon(0.6),
    )?;

    let handle = registry.open("households")?;
    let batch = ReleaseBatch::new(vec![
        StatisticRequest::new("rooms-mean", "rooms", StatisticKind::Mean).with_epsilon(0.1),
        StatisticRequest::new("tenure", "tenure", StatisticKind::Histogram).with_epsilon(0.1),
        StatisticRequest::new("income-median", "income", StatisticKind::Quantile).with_epsilon(0.1),
        StatisticRequest::derived(
            "crowded",
            Transform {
                program: "rooms <= 2".into(),
                lower: None,
                upper: None,
            },
            StatisticKind::Mean,
        )
        .with_epsilon(0.1),
    ]);
    let out = handle.release(&Actor::depositor(), &batch, &mut secure_rng())?;
    println!(
        "batch {} cost {:.4}, {:.4} left",
        out.batch_id, out.cost.epsilon, out.remaining.epsilon
    );
    println!("{}", handle.public_metadata()?.to_json_pretty());
    Ok(())
}
