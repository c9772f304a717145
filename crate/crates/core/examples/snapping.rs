//! Draws from the snapping mechanism, a floating-point safe replacement for
//! textbook Laplace noise: outputs are clamped and rounded to a power-of-two
//! grid so the low bits carry no information about the input.
//!
//! cargo run --release -p dprelease --example snapping

use dprelease::mechanisms::{snap, SnapParams};
use dprelease::rng::seeded_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (bound, sensitivity, eps) = (10.0, 0.1, 1.0);
    let params = SnapParams::for_laplace(bound, sensitivity, eps)?;
    println!(
        "bound {bound}, sensitivity {sensitivity}, epsilon {eps}, grid {}",
        params.grid
    );
    let mut rng = seeded_rng(3);
    let x = 2.71;
    let draws: Vec<f64> = (0..10)
        .map(|_| snap(x, &params, eps, &mut rng))
        .collect::<Result<_, _>>()?;
    println!("ten releases of {x}: {draws:?}");

    let n = 100_000;
    let mean_abs = (0..n)
        .map(|_| snap(x, &params, eps, &mut rng).map(|y| (y - x).abs()))
        .sum::<Result<f64, _>>()?
        / n as f64;
    println!(
        "mean absolute error over {n} draws: {mean_abs:.4} (Laplace scale {})",
        sensitivity / eps
    );
    Ok(())
}
