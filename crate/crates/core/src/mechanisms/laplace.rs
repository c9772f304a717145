use rand::{CryptoRng, RngCore};

use super::MechanismError;
use crate::rng::uniform_open_closed;

/// Zero-centred Laplace distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Laplace {
    scale: f64,
}

impl Laplace {
    pub fn new(scale: f64) -> Result<Self, MechanismError> {
        if scale.is_finite() && scale > 0.0 {
            Ok(Laplace { scale })
        } else {
            Err(MechanismError::InvalidParameter(format!(
                "Laplace scale must be finite and positive, got {scale}"
            )))
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Inverse-CDF draw: a fair sign times `scale * -ln(U)` with `U` in `(0, 1]`.
    pub fn sample<R: RngCore + CryptoRng + ?Sized>(&self, rng: &mut R) -> f64 {
        let negative = rng.next_u32() & 1 == 1;
        let magnitude = -self.scale * uniform_open_closed(rng).ln();
        if negative {
            -magnitude
        } else {
            magnitude
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.5 * (x / self.scale).exp()
        } else {
            1.0 - 0.5 * (-x / self.scale).exp()
        }
    }
}

/// One Laplace draw with the given scale from a secure generator.
pub fn laplace_noise<R: RngCore + CryptoRng + ?Sized>(
    scale: f64,
    rng: &mut R,
) -> Result<f64, MechanismError> {
    Ok(Laplace::new(scale)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    const DRAWS: usize = 1_000_000;

    fn draws(scale: f64, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed);
        (0..DRAWS)
            .map(|_| laplace_noise(scale, &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn rejects_bad_scale() {
        let mut rng = seeded_rng(0);
        assert!(laplace_noise(0.0, &mut rng).is_err());
        assert!(laplace_noise(-1.0, &mut rng).is_err());
        assert!(laplace_noise(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn empirical_mean_is_near_zero() {
        let s = 2.5;
        let xs = draws(s, 11);
        let mean = xs.iter().sum::<f64>() / DRAWS as f64;
        assert!(mean.abs() < 5.0 * s * 1e-3, "mean {mean}");
    }

    #[test]
    fn tail_mass_beyond_s_ln20_is_five_percent() {
        let s = 0.7;
        let xs = draws(s, 12);
        let t = s * 20f64.ln();
        let frac = xs.iter().filter(|x| x.abs() > t).count() as f64 / DRAWS as f64;
        assert!((frac - 0.05).abs() < 0.01, "tail {frac}");
    }

    #[test]
    fn kolmogorov_smirnov_against_analytic_cdf() {
        let s = 1.3;
        let mut xs = draws(s, 13);
        xs.sort_by(f64::total_cmp);
        let lap = Laplace::new(s).unwrap();
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = lap.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.002, "KS statistic {ks}");
    }
}
