//! Parses a few derived-variable programs, infers their ranges from the
//! declared ranges of their inputs, and evaluates them row by row.
//!
//! cargo run --release -p dprelease --example transforms

use std::collections::HashMap;

use dprelease::dsl::{evaluate_rows, infer_range, parse, Interval, Program};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let declared: Vec<String> = ["age", "income", "hours"].map(String::from).to_vec();
    let ranges = HashMap::from([
        ("age".to_string(), Interval::new(16.0, 99.0)),
        ("income".to_string(), Interval::new(0.0, 200_000.0)),
        ("hours".to_string(), Interval::new(0.0, 80.0)),
    ]);
    let age = [23.0, 45.0, 67.0, 70.0];
    let income = [18_000.0, 64_000.0, 31_000.0, 250_000.0];
    let hours = [40.0, 50.0, 0.0, 10.0];

    for source in [
        "income * 0.001",
        "(age >= 65) * (hours > 0)",
        "let weekly = hours * 52 in min(weekly, 2000)",
        "max(age - 18, 0) * 12",
    ] {
        let expr = parse(source, &declared)?;
        let range = infer_range(&expr, &ranges);
        let inputs = expr.free_variables();
        let program = Program::compile(&expr, &inputs)?;
        let columns: Vec<&[f64]> = inputs
            .iter()
            .map(|n| match n.as_str() {
                "age" => &age[..],
                "income" => &income[..],
                _ => &hours[..],
            })
            .collect();
        let values = evaluate_rows(&program, &columns, range);
        println!(
            "{source}\n  range [{}, {}]  values {values:?}",
            range.lo, range.hi
        );
    }

    match parse("age / 2", &declared) {
        Ok(_) => {}
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
