//! Randomness for noise generation.
//!
//! Every mechanism draws from a [`NoiseRng`], a ChaCha20 stream cipher
//! generator. In production it is keyed from the operating system; test mode
//! keys it from a fixed seed so releases are reproducible byte for byte.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Cryptographically secure generator used by all mechanisms.
pub type NoiseRng = ChaCha20Rng;

/// Generator keyed from operating-system entropy.
pub fn secure_rng() -> NoiseRng {
    ChaCha20Rng::from_os_rng()
}

/// Deterministic generator for test mode.
pub fn seeded_rng(seed: u64) -> NoiseRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Keys an independent child generator from `parent`.
///
/// Used to hand each statistic of a batch its own stream before work is
/// spread across threads, so results do not depend on scheduling.
pub fn child_rng(parent: &mut NoiseRng) -> NoiseRng {
    let mut seed = [0u8; 32];
    parent.fill_bytes(&mut seed);
    ChaCha20Rng::from_seed(seed)
}

/// Uniform draw from `(0, 1]` with 53 bits of precision.
pub(crate) fn uniform_open_closed<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let bits = rng.next_u64() >> 11;
    (bits + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw from `(0, 1)` in which every representable double can occur
/// with probability proportional to the width of its rounding interval.
///
/// The exponent is drawn geometrically (one fair coin per binade) and the 52
/// mantissa bits uniformly, so small values keep full relative precision
/// instead of collapsing onto a coarse `2^-53` lattice.
pub(crate) fn uniform_full_precision<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let mut exponent: i32 = -1;
    loop {
        let word = rng.next_u64();
        if word != 0 {
            exponent -= word.trailing_zeros() as i32;
            break;
        }
        exponent -= 64;
        if exponent < -1074 {
            // Probability 2^-1074; treat as the smallest positive value.
            return f64::from_bits(1);
        }
    }
    let mantissa = rng.next_u64() >> 12;
    let significand = 1.0 + mantissa as f64 / (1u64 << 52) as f64;
    let value = significand * 2f64.powi(exponent);
    if value >= 1.0 {
        f64::from_bits(1.0f64.to_bits() - 1)
    } else {
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_streams_are_reproducible() {
        let mut a = seeded_rng(7);
        let mut b = seeded_rng(7);
        assert_eq!(a.next_u64(), b.next_u64());
        let mut ca = child_rng(&mut a);
        let mut cb = child_rng(&mut b);
        assert_eq!(ca.next_u64(), cb.next_u64());
    }

    #[test]
    fn uniform_draws_stay_in_range() {
        let mut rng = seeded_rng(1);
        for _ in 0..100_000 {
            let u = uniform_open_closed(&mut rng);
            assert!(u > 0.0 && u <= 1.0);
            let v = uniform_full_precision(&mut rng);
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn full_precision_uniform_has_correct_mean_and_small_values() {
        let mut rng = seeded_rng(2);
        let draws: Vec<f64> = (0..200_000)
            .map(|_| uniform_full_precision(&mut rng))
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
        // About 2^-10 of draws fall below 2^-10; check the binade mass.
        let below = draws.iter().filter(|&&u| u < 1.0 / 1024.0).count() as f64;
        let frac = below / draws.len() as f64;
        assert!((frac - 1.0 / 1024.0).abs() < 0.0005, "frac {frac}");
    }
}
