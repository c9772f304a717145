use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::{check_epsilon, MechanismError};
use crate::rng::uniform_full_precision;

/// Parameters of the snapping mechanism: clamp bound `B`, output grid
/// spacing `Λ` (a power of two) and the query's sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapParams {
    pub bound: f64,
    pub grid: f64,
    pub sensitivity: f64,
}

fn is_power_of_two(x: f64) -> bool {
    x.is_normal() && x > 0.0 && x.to_bits() & ((1u64 << 52) - 1) == 0
}

impl SnapParams {
    pub fn new(bound: f64, grid: f64, sensitivity: f64) -> Result<Self, MechanismError> {
        let p = SnapParams {
            bound,
            grid,
            sensitivity,
        };
        p.validate()?;
        Ok(p)
    }

    /// Grid set to the smallest power of two at least the Laplace scale
    /// `sensitivity / eps`.
    pub fn for_laplace(bound: f64, sensitivity: f64, eps: f64) -> Result<Self, MechanismError> {
        check_epsilon(eps)?;
        let scale = sensitivity / eps;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(MechanismError::InvalidParameter(format!(
                "Laplace scale {scale} is not usable"
            )));
        }
        let grid = 2f64.powi(scale.log2().ceil() as i32);
        SnapParams::new(bound, grid, sensitivity)
    }

    pub fn validate(&self) -> Result<(), MechanismError> {
        let bad = |msg: String| Err(MechanismError::InvalidParameter(msg));
        if !(self.bound.is_finite() && self.bound > 0.0) {
            return bad(format!(
                "snapping bound must be finite and positive, got {}",
                self.bound
            ));
        }
        if !is_power_of_two(self.grid) {
            return bad(format!("snapping grid {} is not a power of two", self.grid));
        }
        if self.grid > 2.0 * self.bound {
            return bad(format!(
                "snapping grid {} exceeds twice the bound {}",
                self.grid, self.bound
            ));
        }
        if !(self.sensitivity.is_finite() && self.sensitivity > 0.0) {
            return bad(format!(
                "sensitivity must be finite and positive, got {}",
                self.sensitivity
            ));
        }
        Ok(())
    }

    /// Largest grid point not above `bound`; outputs are clamped to it.
    fn grid_bound(&self) -> f64 {
        (self.bound / self.grid).floor() * self.grid
    }
}

/// Snapping mechanism: `clamp_B(round_Λ(clamp_B(x) + λ·S·ln U))`, `λ = Δ/ε`.
///
/// `U` is drawn with every floating-point value in `(0, 1)` reachable at its
/// true probability, `S` is a fair sign, and rounding to a power-of-two grid
/// discards the low-order bits whose distribution would otherwise depend on
/// the input. Outputs are multiples of `Λ` in `[−B, B]`.
pub fn snap<R: RngCore + CryptoRng + ?Sized>(
    true_value: f64,
    params: &SnapParams,
    eps: f64,
    rng: &mut R,
) -> Result<f64, MechanismError> {
    check_epsilon(eps)?;
    params.validate()?;
    if true_value.is_nan() {
        return Err(MechanismError::InvalidParameter("input is NaN".into()));
    }
    let b = params.bound;
    let x = true_value.clamp(-b, b);
    let sign = if rng.next_u32() & 1 == 1 { -1.0 } else { 1.0 };
    let noisy = x + (params.sensitivity / eps) * sign * uniform_full_precision(rng).ln();
    // Division and multiplication by a power of two are exact.
    let snapped = (noisy.clamp(-b, b) / params.grid).round() * params.grid;
    let limit = params.grid_bound();
    Ok(snapped.clamp(-limit, limit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn outputs_sit_on_the_grid_within_bound() {
        let params = SnapParams::new(10.0, 0.25, 1.0).unwrap();
        let mut rng = seeded_rng(1);
        for i in 0..100_000 {
            let x = (i as f64 * 0.37).sin() * 12.0;
            let y = snap(x, &params, 0.5, &mut rng).unwrap();
            assert!(y.abs() <= 10.0);
            assert_eq!((y / 0.25).fract(), 0.0, "{y}");
        }
    }

    #[test]
    fn huge_epsilon_gives_nearest_grid_point() {
        let params = SnapParams::new(100.0, 0.5, 1.0).unwrap();
        let mut rng = seeded_rng(2);
        for (x, expected) in [(3.1, 3.0), (3.3, 3.5), (-7.74, -7.5), (250.0, 100.0)] {
            assert_eq!(snap(x, &params, 1e12, &mut rng).unwrap(), expected);
        }
    }

    #[test]
    fn grid_must_be_power_of_two() {
        assert!(SnapParams::new(10.0, 0.3, 1.0).is_err());
        assert!(SnapParams::new(10.0, 3.0, 1.0).is_err());
        assert!(SnapParams::new(1.0, 4.0, 1.0).is_err());
        assert!(SnapParams::new(10.0, 0.125, 1.0).is_ok());
    }

    #[test]
    fn laplace_grid_choice() {
        let p = SnapParams::for_laplace(50.0, 1.0, 0.3).unwrap();
        // 1/0.3 = 3.33 -> 4
        assert_eq!(p.grid, 4.0);
    }

    #[test]
    fn output_concentrates_near_input() {
        let params = SnapParams::new(1000.0, 1.0 / 64.0, 1.0).unwrap();
        let mut rng = seeded_rng(3);
        let eps = 2.0;
        let radius = (1.0 / eps) * 1e6f64.ln() + params.grid;
        // Each draw exceeds the radius with probability about 1e-6.
        let outside = (0..1_000_000)
            .filter(|_| (snap(5.0, &params, eps, &mut rng).unwrap() - 5.0).abs() > radius)
            .count();
        assert!(outside <= 5, "{outside} draws outside");
    }
}
