//! Optimal composition of `k` mechanisms that are `(εᵢ, δᵢ)`-DP.
//!
//! The composed mechanism is `(ε_g, δ_g)`-DP for the least `ε_g` with
//!
//! ```text
//!   Σ_{S ⊆ [k]} max{ e^{Σ_{i∈S} εᵢ} − e^{ε_g}·e^{Σ_{i∉S} εᵢ}, 0 } / Π(1 + e^{εᵢ})
//!       ≤ 1 − (1 − δ_g) / Π(1 − δᵢ).
//! ```
//!
//! Dividing through, each subset contributes `P(S) − e^{ε_g}·Q(S)` where `P`
//! includes `i` with probability `pᵢ = e^{εᵢ}/(1 + e^{εᵢ})` and `Q` with
//! `1 − pᵢ`. Both are probability distributions, so the left side never
//! overflows however large `Σεᵢ` gets. The left side is non-increasing in
//! `ε_g`, which makes a bisection on `[0, Σεᵢ]` exact up to its tolerance.

use super::CompositionError;

/// Largest `k` handled by subset enumeration.
pub const EXACT_LIMIT: usize = 20;

/// Bisection stops once the bracket is this narrow.
const SEARCH_TOLERANCE: f64 = 1e-12;

/// Largest grid the approximation will build before coarsening.
const MAX_APPROX_GRID: usize = 4_000_000;

/// Rounding allowance when `δ_g` sits exactly on the floor `1 − Π(1 − δᵢ)`.
const FLOOR_TOLERANCE: f64 = 1e-12;

/// `1 − (1 − δ_g)/Π(1 − δᵢ)`, computed without cancellation and floored at 0
/// within [`FLOOR_TOLERANCE`] relative to `δ_g`.
pub fn delta_slack(deltas: &[f64], delta_g: f64) -> f64 {
    raw_delta_slack(deltas, delta_g).max(0.0)
}

fn raw_delta_slack(deltas: &[f64], delta_g: f64) -> f64 {
    let log_ratio = (-delta_g).ln_1p() - deltas.iter().map(|d| (-d).ln_1p()).sum::<f64>();
    -log_ratio.exp_m1()
}

fn validate(eps: &[f64], deltas: &[f64], delta_g: f64) -> Result<(), CompositionError> {
    if eps.len() != deltas.len() {
        return Err(CompositionError::InvalidParameter(format!(
            "{} epsilons but {} deltas",
            eps.len(),
            deltas.len()
        )));
    }
    if eps.is_empty() {
        return Err(CompositionError::Empty);
    }
    for &e in eps {
        if !(e.is_finite() && e >= 0.0) {
            return Err(CompositionError::InvalidParameter(format!(
                "epsilon must be finite and non-negative, got {e}"
            )));
        }
    }
    for &d in deltas.iter().chain(std::iter::once(&delta_g)) {
        if !(0.0..1.0).contains(&d) {
            return Err(CompositionError::InvalidParameter(format!(
                "delta must lie in [0, 1), got {d}"
            )));
        }
    }
    if raw_delta_slack(deltas, delta_g) < -FLOOR_TOLERANCE * delta_g.max(f64::MIN_POSITIVE) {
        return Err(CompositionError::InfeasibleDelta {
            delta_g,
            floor: -(deltas.iter().map(|d| (-d).ln_1p()).sum::<f64>()).exp_m1(),
        });
    }
    Ok(())
}

/// Subsets of the mechanisms grouped by likelihood ratio: each entry is
/// `(ln(P/Q), P, Q)` for one group.
struct Groups(Vec<(f64, f64, f64)>);

impl Groups {
    /// Every subset as its own group, built by doubling in `O(2^k)`.
    fn enumerate(eps: &[f64]) -> Self {
        let mut groups = Vec::with_capacity(1 << eps.len());
        groups.push((0.0, 1.0, 1.0));
        for &e in eps {
            let p_in = logistic(e);
            let p_out = logistic(-e);
            let len = groups.len();
            for j in 0..len {
                let (r, p, q) = groups[j];
                groups[j] = (r - e, p * p_out, q * p_in);
                groups.push((r + e, p * p_in, q * p_out));
            }
        }
        Groups(groups)
    }

    /// Left side of the inequality at `eps_g`. Groups with ratio at most
    /// `eps_g` contribute nothing by definition, which keeps rounding in
    /// `P − e^{ε_g}·Q` from making a tight pure-ε budget look infeasible.
    fn lhs(&self, eps_g: f64) -> f64 {
        let scale = eps_g.exp();
        self.0
            .iter()
            .filter(|g| g.0 > eps_g)
            .map(|&(_, p, q)| (p - scale * q).max(0.0))
            .sum()
    }

    fn into_region(mut self) -> PrivacyRegion {
        self.0.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut p_prefix = Vec::with_capacity(self.0.len() + 1);
        let mut q_prefix = Vec::with_capacity(self.0.len() + 1);
        let (mut p_acc, mut q_acc) = (0.0, 0.0);
        p_prefix.push(0.0);
        q_prefix.push(0.0);
        for &(_, p, q) in &self.0 {
            p_acc += p;
            q_acc += q;
            p_prefix.push(p_acc);
            q_prefix.push(q_acc);
        }
        PrivacyRegion {
            log_ratio: self.0.into_iter().map(|g| g.0).collect(),
            p_prefix,
            q_prefix,
        }
    }
}

/// `1 / (1 + e^{−x})` without overflow.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Left side as a function of `ε_g`, with groups sorted by decreasing
/// likelihood ratio so that the positive terms form a prefix.
struct PrivacyRegion {
    log_ratio: Vec<f64>,
    p_prefix: Vec<f64>,
    q_prefix: Vec<f64>,
}

impl PrivacyRegion {
    fn lhs(&self, eps_g: f64) -> f64 {
        let j = self.log_ratio.partition_point(|&r| r > eps_g);
        (self.p_prefix[j] - eps_g.exp() * self.q_prefix[j]).max(0.0)
    }

    /// Least `ε_g ∈ [0, upper]` with `lhs(ε_g) ≤ slack`; `lhs(upper)` must be 0.
    fn least_epsilon(&self, slack: f64, upper: f64) -> f64 {
        if self.lhs(0.0) <= slack {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, upper);
        while hi - lo > SEARCH_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.lhs(mid) <= slack {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

fn sorted(eps: &[f64]) -> Vec<f64> {
    let mut v = eps.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn check_exact_size(k: usize) -> Result<(), CompositionError> {
    if k > EXACT_LIMIT {
        return Err(CompositionError::TooMany {
            k,
            limit: EXACT_LIMIT,
        });
    }
    Ok(())
}

/// Exact optimal `ε_g` by enumerating all `2^k` subsets (`k ≤ 20`).
pub fn optimal_epsilon_exact(
    eps: &[f64],
    deltas: &[f64],
    delta_g: f64,
) -> Result<f64, CompositionError> {
    validate(eps, deltas, delta_g)?;
    check_exact_size(eps.len())?;
    // Canonical order keeps the floating-point sums independent of input order.
    let eps = sorted(eps);
    let total: f64 = eps.iter().sum();
    let region = Groups::enumerate(&eps).into_region();
    Ok(region
        .least_epsilon(delta_slack(deltas, delta_g), total)
        .min(total))
}

/// Whether the exact optimal composition at `delta_g` is at most `eps_g`,
/// decided by one evaluation of the inequality.
pub fn optimal_feasible_exact(
    eps: &[f64],
    deltas: &[f64],
    eps_g: f64,
    delta_g: f64,
) -> Result<bool, CompositionError> {
    validate(eps, deltas, delta_g)?;
    check_exact_size(eps.len())?;
    let eps = sorted(eps);
    if eps.iter().sum::<f64>() <= eps_g {
        return Ok(true);
    }
    Ok(Groups::enumerate(&eps).lhs(eps_g) <= delta_slack(deltas, delta_g))
}

/// Groups of the rounded instance used by the approximation, plus the
/// rounded total `Σ aᵢ·η`.
fn approx_groups(eps: &[f64], slack: f64) -> (Groups, f64) {
    let mut step = slack / eps.len() as f64;
    let grid_size = |step: f64| eps.iter().map(|e| (e / step).ceil()).sum::<f64>();
    if grid_size(step) > MAX_APPROX_GRID as f64 {
        let total: f64 = eps.iter().sum();
        step = total / (MAX_APPROX_GRID as f64 - eps.len() as f64);
    }
    let weights: Vec<usize> = eps.iter().map(|&e| (e / step).ceil() as usize).collect();
    let span: usize = weights.iter().sum();

    // dist[j] = P(Σ_{i∈S} aᵢ = j)
    let mut dist = vec![0.0f64; span + 1];
    dist[0] = 1.0;
    let mut reach = 0usize;
    for &a in &weights {
        if a == 0 {
            continue;
        }
        let p_in = logistic(a as f64 * step);
        let p_out = logistic(-(a as f64 * step));
        for j in (0..=reach).rev() {
            let v = dist[j];
            dist[j + a] += v * p_in;
            dist[j] = v * p_out;
        }
        reach += a;
    }

    let groups = (0..=span)
        .filter(|&j| dist[j] > 0.0 || dist[span - j] > 0.0)
        .map(|j| {
            let ratio = (2.0 * j as f64 - span as f64) * step;
            (ratio, dist[j], dist[span - j])
        })
        .collect();
    (Groups(groups), span as f64 * step)
}

fn check_slack(slack: f64) -> Result<(), CompositionError> {
    if !(slack.is_finite() && slack > 0.0) {
        return Err(CompositionError::InvalidParameter(format!(
            "approximation slack must be positive, got {slack}"
        )));
    }
    Ok(())
}

/// Upper bound on the optimal `ε_g` within additive `slack` of it, for any
/// `k`.
///
/// Each `εᵢ` is rounded up to a multiple of `η = slack / k`, which puts
/// `e^{εᵢ}` on the geometric grid `e^{η·j}` and changes the composed bound by
/// at most `Σ(rounded − εᵢ) ≤ slack`. Subsets then group by their integer
/// weight `j = Σ_{i∈S} aᵢ`, whose distribution under `P` is a convolution
/// computed by dynamic programming; under `Q` weight `j` has the probability
/// `P` assigns to `A − j`. Cost is `O(k·A)` with `A = Σaᵢ ≈ k·Σεᵢ/slack`.
/// Should `A` exceed an internal cap the grid is coarsened, which keeps the
/// result an upper bound but may widen the gap beyond `slack`. The result
/// never exceeds `Σεᵢ`.
pub fn optimal_epsilon_approx(
    eps: &[f64],
    deltas: &[f64],
    delta_g: f64,
    slack: f64,
) -> Result<f64, CompositionError> {
    validate(eps, deltas, delta_g)?;
    check_slack(slack)?;
    let eps = sorted(eps);
    let total: f64 = eps.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let (groups, rounded_total) = approx_groups(&eps, slack);
    let bound = groups
        .into_region()
        .least_epsilon(delta_slack(deltas, delta_g), rounded_total);
    Ok(bound.min(total))
}

/// Whether [`optimal_epsilon_approx`] would return at most `eps_g`.
pub fn optimal_feasible_approx(
    eps: &[f64],
    deltas: &[f64],
    eps_g: f64,
    delta_g: f64,
    slack: f64,
) -> Result<bool, CompositionError> {
    validate(eps, deltas, delta_g)?;
    check_slack(slack)?;
    let eps = sorted(eps);
    if eps.iter().sum::<f64>() <= eps_g {
        return Ok(true);
    }
    let (groups, _) = approx_groups(&eps, slack);
    Ok(groups.lhs(eps_g) <= delta_slack(deltas, delta_g))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation of the inequality's left side by subset enumeration,
    /// written independently of the grouped/prefix formulation above.
    fn brute_lhs(eps: &[f64], eps_g: f64) -> f64 {
        let k = eps.len();
        let norm: f64 = eps.iter().map(|e| 1.0 + e.exp()).product();
        let mut sum = 0.0;
        for mask in 0..(1u32 << k) {
            let (mut s_in, mut s_out) = (0.0, 0.0);
            for (i, e) in eps.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    s_in += e;
                } else {
                    s_out += e;
                }
            }
            sum += (s_in.exp() - eps_g.exp() * s_out.exp()).max(0.0);
        }
        sum / norm
    }

    fn brute_rhs(deltas: &[f64], delta_g: f64) -> f64 {
        1.0 - (1.0 - delta_g) / deltas.iter().map(|d| 1.0 - d).product::<f64>()
    }

    #[test]
    fn single_mechanism_composes_to_itself() {
        for (e, d, dg) in [(0.5, 0.0, 0.0), (1.2, 1e-6, 1e-6), (0.1, 0.0, 0.0)] {
            let g = optimal_epsilon_exact(&[e], &[d], dg).unwrap();
            assert!((g - e).abs() < 1e-9, "{g} vs {e}");
        }
    }

    #[test]
    fn five_homogeneous_matches_enumeration() {
        let eps = [0.2; 5];
        let deltas = [0.0; 5];
        let dg = 2f64.powi(-20);
        let g = optimal_epsilon_exact(&eps, &deltas, dg).unwrap();
        let rhs = brute_rhs(&deltas, dg);
        assert!(brute_lhs(&eps, g) <= rhs + 1e-15);
        assert!(brute_lhs(&eps, g - 1e-6) > rhs);
        assert!(g <= 1.0);
    }

    #[test]
    fn never_worse_than_basic() {
        let eps = [0.3, 0.1, 0.7, 0.05];
        let deltas = [1e-7, 0.0, 2e-7, 0.0];
        let floor = -deltas
            .iter()
            .map(|d: &f64| (-d).ln_1p())
            .sum::<f64>()
            .exp_m1();
        let g = optimal_epsilon_exact(&eps, &deltas, floor).unwrap();
        assert!(g <= eps.iter().sum::<f64>() + 1e-12);
    }

    #[test]
    fn delta_below_floor_is_infeasible() {
        let err = optimal_epsilon_exact(&[0.1, 0.1], &[1e-5, 1e-5], 1e-5).unwrap_err();
        assert!(matches!(err, CompositionError::InfeasibleDelta { .. }));
    }

    #[test]
    fn exact_refuses_large_k() {
        let eps = vec![0.01; 21];
        let deltas = vec![0.0; 21];
        assert!(matches!(
            optimal_epsilon_exact(&eps, &deltas, 1e-6),
            Err(CompositionError::TooMany { .. })
        ));
        assert!(optimal_epsilon_approx(&eps, &deltas, 1e-6, 1e-3).is_ok());
    }

    #[test]
    fn approximation_brackets_exact() {
        let eps = [0.1, 0.25, 0.05, 0.4, 0.3, 0.2];
        let deltas = [0.0, 1e-8, 0.0, 0.0, 0.0, 1e-9];
        let dg = 1e-6;
        let exact = optimal_epsilon_exact(&eps, &deltas, dg).unwrap();
        for slack in [1e-1, 1e-2, 1e-3] {
            let approx = optimal_epsilon_approx(&eps, &deltas, dg, slack).unwrap();
            assert!(approx >= exact - 1e-9, "{approx} < {exact}");
            assert!(approx <= exact + slack, "{approx} > {exact} + {slack}");
        }
    }

    #[test]
    fn homogeneous_binomial_closed_form() {
        // Σ_i C(k,i)·max(e^{iε} − e^{ε_g}e^{(k−i)ε}, 0) / (1+e^ε)^k
        fn binomial_lhs(k: usize, e: f64, eps_g: f64) -> f64 {
            let mut total = 0.0;
            let mut choose = 1.0f64;
            for i in 0..=k {
                if i > 0 {
                    choose = choose * (k - i + 1) as f64 / i as f64;
                }
                let term = (i as f64 * e).exp() - eps_g.exp() * ((k - i) as f64 * e).exp();
                total += choose * term.max(0.0);
            }
            total / (1.0 + e.exp()).powi(k as i32)
        }
        let (k, e, dg) = (40usize, 0.05, 1e-6);
        // Bisection on the closed form.
        let (mut lo, mut hi) = (0.0, k as f64 * e);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if binomial_lhs(k, e, mid) <= dg {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let slack = 1e-3;
        let approx = optimal_epsilon_approx(&vec![e; k], &vec![0.0; k], dg, slack).unwrap();
        assert!(
            approx >= hi - 1e-9 && approx <= hi + slack,
            "{approx} vs {hi}"
        );
        assert!(approx < k as f64 * e);
    }

    #[test]
    fn input_order_does_not_matter() {
        let a = [0.3, 0.1, 0.2, 0.15];
        let b = [0.15, 0.2, 0.3, 0.1];
        let z = [0.0; 4];
        assert_eq!(
            optimal_epsilon_exact(&a, &z, 1e-6).unwrap().to_bits(),
            optimal_epsilon_exact(&b, &z, 1e-6).unwrap().to_bits()
        );
        assert_eq!(
            optimal_epsilon_approx(&a, &z, 1e-6, 1e-3)
                .unwrap()
                .to_bits(),
            optimal_epsilon_approx(&b, &z, 1e-6, 1e-3)
                .unwrap()
                .to_bits()
        );
    }

    #[test]
    fn zero_epsilons() {
        assert_eq!(
            optimal_epsilon_exact(&[0.0, 0.0], &[0.0, 0.0], 0.0).unwrap(),
            0.0
        );
        assert_eq!(
            optimal_epsilon_approx(&[0.0], &[0.0], 0.0, 0.01).unwrap(),
            0.0
        );
    }
}
