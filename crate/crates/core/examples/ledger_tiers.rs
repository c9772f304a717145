//! Shows how the durable ledger divides a budget between the depositor, a
//! shared pool for untrusted users and a private account per semi-trusted
//! user, and how over-budget batches are turned away.
//!
//! cargo run --release -p dprelease --example ledger_tiers

use dprelease::budgeter::{AccountsConfig, Actor, LedgerStore};
use dprelease::PrivacyParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("ledger.ndjson");
    let config = AccountsConfig::new(
        PrivacyParams::new(0.8, 1e-6)?,
        PrivacyParams::new(0.4, 1e-6)?,
    );
    let ledger = LedgerStore::open(&path, config)?;

    let depositor = Actor::depositor();
    let alice = Actor::semi_trusted("alice");
    let bob = Actor::semi_trusted("bob");
    let eve = Actor::untrusted("eve");
    let mallory = Actor::untrusted("mallory");
    for who in [&depositor, &alice, &bob, &eve] {
        println!(
            "{:>16}  budget {:.3}",
            who.account()?,
            ledger.account_budget(who)?.epsilon
        );
    }

    let steps: [(&Actor, &str, &[f64]); 6] = [
        (&depositor, "d1", &[0.1, 0.1, 0.1]),
        (&alice, "a1", &[0.15]),
        (&alice, "a2", &[0.1]),
        (&bob, "b1", &[0.1]),
        (&eve, "e1", &[0.15]),
        (&mallory, "m1", &[0.1]),
    ];
    for (who, id, eps) in steps {
        let batch: Vec<PrivacyParams> = eps.iter().map(|&e| PrivacyParams::pure(e)).collect();
        match ledger.deduct(who, id, &batch) {
            Ok(c) => println!(
                "{id}: charged {:.4}, {} left {:.4}",
                c.cost.epsilon,
                who.account()?,
                ledger.remaining(who)?.epsilon
            ),
            Err(e) => println!("{id}: refused, {e}"),
        }
    }

    drop(ledger);
    let reopened = LedgerStore::open(&path, config)?;
    println!(
        "after reopening, the shared pool has {:.4} left",
        reopened.remaining(&eve)?.epsilon
    );
    println!("journal:\n{}", std::fs::read_to_string(&path)?);
    Ok(())
}
