//! Compares basic and optimal composition for k identical statistics, then
//! walks a budget filter through a few batches.
//!
//! cargo run --release -p dprelease --example composition

use dprelease::composition::{
    composed_epsilon, BatchCost, BatchLedger, CompositionRule, DeltaPolicy, PrivacyParams,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let delta_g = 1e-6;
    println!("each statistic at epsilon 0.1, composed at delta {delta_g}");
    println!("{:>4}  {:>8}  {:>8}", "k", "basic", "optimal");
    for k in [1, 2, 5, 10, 20, 50, 100] {
        let batch = vec![PrivacyParams::pure(0.1); k];
        let basic = composed_epsilon(&batch, delta_g, CompositionRule::Basic)?;
        let optimal = composed_epsilon(&batch, delta_g, CompositionRule::default())?;
        println!("{k:>4}  {basic:>8.4}  {optimal:>8.4}");
    }

    let global = PrivacyParams::new(1.0, 1e-6)?;
    let mut ledger = BatchLedger::new(global, CompositionRule::default(), DeltaPolicy::default());
    for (i, k) in [8usize, 8, 8].into_iter().enumerate() {
        let batch = vec![PrivacyParams::pure(0.06); k];
        let cost = ledger.price(&batch)?;
        let entry = BatchCost {
            batch_id: format!("batch-{i}"),
            statistics: k,
            cost,
        };
        match ledger.admit(entry) {
            Ok(c) => println!(
                "batch-{i}: {k} x 0.06 charged {:.4}, remaining {:.4}",
                c.cost.epsilon,
                ledger.remaining().epsilon
            ),
            Err(e) => println!("batch-{i}: rejected ({e})"),
        }
    }
    Ok(())
}
