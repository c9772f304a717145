//! When the data are a secret random sample of a larger population, the
//! same population-level guarantee allows a larger ε on the sample. Prints
//! the effective budget for growing populations.
//!
//! cargo run --release -p dprelease --example secrecy_of_sample

use dprelease::budgeter::{amplify_budget, SampleInfo};
use dprelease::PrivacyParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let global = PrivacyParams::new(0.5, 1e-7)?;
    let n = 10_000;
    println!(
        "global epsilon {} delta {}, sample of {n}",
        global.epsilon, global.delta
    );
    println!("{:>12}  {:>10}  {:>12}", "population", "epsilon", "delta");
    for m in [
        10_000,
        15_000,
        20_000,
        50_000,
        100_000,
        1_000_000,
        330_000_000,
    ] {
        let eff = amplify_budget(
            global,
            &SampleInfo {
                is_secret_sample: true,
                n,
                m,
            },
        )?;
        println!("{m:>12}  {:>10.4}  {:>12.3e}", eff.epsilon, eff.delta);
    }
    Ok(())
}
