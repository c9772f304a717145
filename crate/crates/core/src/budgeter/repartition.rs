use serde::{Deserialize, Serialize};

use super::{
    amplify_budget, split_budget, vet_global_params, BudgetError, GlobalBudget, SampleInfo,
};
use crate::accuracy::{accuracy_to_epsilon, epsilon_to_accuracy};
use crate::composition::{
    basic_compose, composed_epsilon, max_scale_factor, CompositionError, CompositionRule,
    PrivacyParams,
};
use crate::mechanisms::VariableSpec;
use crate::request::{RequestError, StatisticRequest};

/// Everything the repartition needs; no other state is consulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepartitionInput {
    pub global: PrivacyParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleInfo>,
    /// `ε_d`; the whole effective budget when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depositor_epsilon: Option<f64>,
    /// Public record count.
    pub n: usize,
    pub variables: Vec<VariableSpec>,
    pub requests: Vec<StatisticRequest>,
    #[serde(default)]
    pub rule: CompositionRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepartitionPlan {
    pub budget: GlobalBudget,
    /// The requests with `epsilon` and `accuracy` filled in, in input order.
    pub requests: Vec<StatisticRequest>,
    /// Composed cost of the plan under the chosen rule, at the depositor's `δ`.
    pub total: PrivacyParams,
    /// `(Σεᵢ, Σδᵢ)` for comparison.
    pub basic_total: PrivacyParams,
    pub warnings: Vec<String>,
}

/// Weights are kept to this many significant digits so that repartitioning
/// a plan reproduces it exactly.
const WEIGHT_DIGITS: usize = 12;

fn round_significant(x: f64) -> f64 {
    format!("{:.*e}", WEIGHT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Splits the depositor's budget across `input.requests`.
///
/// Held requests keep their `ε`; one held at a target accuracy gets the `ε`
/// that reaches it. The remaining requests share what is left in proportion
/// to their current `ε` (equally if none is set), scaled by the largest
/// factor the composition rule allows. Accuracies are then recomputed. The
/// result depends only on the input and not on the order of the requests.
pub fn repartition(input: &RepartitionInput) -> Result<RepartitionPlan, BudgetError> {
    let mut warnings = vet_global_params(input.global.epsilon, input.global.delta)?;
    let effective = match &input.sample {
        Some(s) => amplify_budget(input.global, s)?,
        None => input.global,
    };
    let budget = split_budget(
        input.global,
        effective,
        input.depositor_epsilon.unwrap_or(effective.epsilon),
    )?;
    let target = budget.depositor;

    let mut order: Vec<usize> = (0..input.requests.len()).collect();
    order.sort_by(|&a, &b| input.requests[a].id.cmp(&input.requests[b].id));
    for w in order.windows(2) {
        if input.requests[w[0]].id == input.requests[w[1]].id {
            return Err(BudgetError::DuplicateId(input.requests[w[0]].id.clone()));
        }
    }

    let mut requests = input.requests.clone();
    let mut contexts = Vec::with_capacity(requests.len());
    for r in &requests {
        let resolved = r.resolve(&input.variables)?;
        if let crate::request::TargetSource::Derived(d) = &resolved.source {
            if let Some(w) = &d.warning {
                warnings.push(format!("request `{}`: {}", r.id, describe_range_warning(w)));
            }
        }
        contexts.push(r.accuracy_context(&resolved.spec, input.n)?);
    }

    // Held at a target accuracy: that fixes ε.
    for (r, ctx) in requests.iter_mut().zip(&contexts) {
        if let (true, Some(t)) = (r.hold, r.accuracy) {
            r.epsilon = accuracy_to_epsilon(r.statistic, t, r.alpha, ctx, target.epsilon).map_err(
                |source| RequestError::Accuracy {
                    id: r.id.clone(),
                    source,
                },
            )?;
        } else if r.hold && r.epsilon <= 0.0 {
            return Err(RequestError::Invalid {
                id: r.id.clone(),
                message: "a held statistic needs a positive epsilon or a target accuracy".into(),
            }
            .into());
        }
    }

    if target.epsilon <= 0.0 && !requests.is_empty() {
        return Err(BudgetError::NoDepositorBudget);
    }

    // Unheld weights, normalized so the largest is 1.
    let max_weight = requests
        .iter()
        .filter(|r| !r.hold && r.epsilon > 0.0)
        .map(|r| r.epsilon)
        .fold(0.0, f64::max);
    let weights: Vec<f64> = requests
        .iter()
        .map(|r| {
            if r.hold {
                r.epsilon
            } else if max_weight > 0.0 && r.epsilon > 0.0 {
                round_significant(r.epsilon / max_weight)
            } else {
                1.0
            }
        })
        .collect();

    let sorted_params: Vec<PrivacyParams> = order
        .iter()
        .map(|&i| PrivacyParams {
            epsilon: weights[i],
            delta: requests[i].delta,
        })
        .collect();
    let sorted_held: Vec<bool> = order.iter().map(|&i| requests[i].hold).collect();
    let scale = max_scale_factor(&sorted_params, &sorted_held, target, input.rule).map_err(
        |e| match e {
            CompositionError::InfeasibleHold { held } => BudgetError::InfeasibleHold(
                held.into_iter()
                    .map(|k| requests[order[k]].id.clone())
                    .collect(),
            ),
            other => other.into(),
        },
    )?;

    for (i, r) in requests.iter_mut().enumerate() {
        if !r.hold {
            r.epsilon = weights[i] * scale;
        }
        let ctx = &contexts[i];
        let keep_target = r.hold && r.accuracy.is_some();
        if !keep_target {
            r.accuracy = Some(
                epsilon_to_accuracy(r.statistic, r.epsilon, r.alpha, ctx).map_err(|source| {
                    RequestError::Accuracy {
                        id: r.id.clone(),
                        source,
                    }
                })?,
            );
        }
    }

    let params: Vec<PrivacyParams> = order.iter().map(|&i| requests[i].privacy()).collect();
    let total = PrivacyParams {
        epsilon: composed_epsilon(&params, target.delta, input.rule)?,
        delta: if params.is_empty() { 0.0 } else { target.delta },
    };
    Ok(RepartitionPlan {
        budget,
        requests,
        total,
        basic_total: basic_compose(&params),
        warnings,
    })
}

fn describe_range_warning(w: &crate::dsl::RangeWarning) -> String {
    use crate::dsl::RangeWarning;
    match w {
        RangeWarning::Narrower { declared, inferred } => format!(
            "declared range [{}, {}] is narrower than the possible range [{}, {}]; values outside are clamped",
            declared.lo, declared.hi, inferred.lo, inferred.hi
        ),
        RangeWarning::Wider { declared, inferred } => format!(
            "declared range [{}, {}] is wider than the possible range [{}, {}], which adds noise",
            declared.lo, declared.hi, inferred.lo, inferred.hi
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::check_within_budget;
    use crate::mechanisms::{BinSpec, StatisticKind};

    fn variables() -> Vec<VariableSpec> {
        vec![
            VariableSpec::numeric("age", 0.0, 100.0),
            VariableSpec::numeric("income", 0.0, 500_000.0),
            VariableSpec::categorical("race", ["a", "b", "c", "d", "e"]),
        ]
    }

    fn input(requests: Vec<StatisticRequest>) -> RepartitionInput {
        RepartitionInput {
            global: PrivacyParams::new(1.0, 1e-6).unwrap(),
            sample: None,
            depositor_epsilon: None,
            n: 1000,
            variables: variables(),
            requests,
            rule: CompositionRule::default(),
        }
    }

    fn standard() -> Vec<StatisticRequest> {
        vec![
            StatisticRequest::new("age-mean", "age", StatisticKind::Mean),
            StatisticRequest::new("race-hist", "race", StatisticKind::Histogram),
            StatisticRequest::new("income-cdf", "income", StatisticKind::Cdf),
            StatisticRequest::new("age-median", "age", StatisticKind::Quantile),
        ]
    }

    #[test]
    fn single_mean_gets_everything() {
        let plan = repartition(&input(vec![StatisticRequest::new(
            "m",
            "age",
            StatisticKind::Mean,
        )]))
        .unwrap();
        let r = &plan.requests[0];
        // One ε-DP mechanism is (ε_g, δ)-DP when (e^ε − e^ε_g)/(1 + e^ε) = δ.
        let (eg, dg) = (1.0f64, 1e-6);
        let oracle = ((eg.exp() + dg) / (1.0 - dg)).ln();
        assert!(
            (r.epsilon - oracle).abs() < 1e-8,
            "{} vs {oracle}",
            r.epsilon
        );
        let expected = 100.0 * 20f64.ln() / (1000.0 * r.epsilon);
        assert!((r.accuracy.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn plan_is_within_budget_and_uses_it() {
        let plan = repartition(&input(standard())).unwrap();
        let params: Vec<_> = plan.requests.iter().map(|r| r.privacy()).collect();
        let g = plan.budget.depositor;
        assert!(check_within_budget(&params, g, CompositionRule::default()));
        let bumped: Vec<_> = params
            .iter()
            .map(|p| PrivacyParams::pure(p.epsilon * 1.0001))
            .collect();
        assert!(!check_within_budget(&bumped, g, CompositionRule::default()));
        assert!(plan.total.epsilon <= 1.0 + 1e-9);
        assert!(plan.basic_total.epsilon > 1.0);
    }

    #[test]
    fn idempotent() {
        let once = repartition(&input(standard())).unwrap();
        let twice = repartition(&RepartitionInput {
            requests: once.requests.clone(),
            ..input(vec![])
        })
        .unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn order_does_not_matter() {
        let forward = repartition(&input(standard())).unwrap();
        let mut reversed_requests = standard();
        reversed_requests.reverse();
        let mut reversed = repartition(&input(reversed_requests)).unwrap();
        reversed.requests.reverse();
        assert_eq!(forward, reversed);
    }

    #[test]
    fn held_target_accuracy_fixes_epsilon() {
        let mut reqs = standard();
        reqs[1] = reqs[1]
            .clone()
            .with_bins(BinSpec::Categories)
            .held_at_accuracy(100.0);
        let plan = repartition(&input(reqs)).unwrap();
        let hist = &plan.requests[1];
        // 6 bins: (2/ε)·ln(6/0.05) = 100.
        assert!((hist.epsilon - 2.0 * 120f64.ln() / 100.0).abs() < 1e-12);
        assert_eq!(hist.accuracy, Some(100.0));
        let params: Vec<_> = plan.requests.iter().map(|r| r.privacy()).collect();
        assert!(check_within_budget(
            &params,
            plan.budget.depositor,
            CompositionRule::default()
        ));
    }

    #[test]
    fn deleting_a_request_tightens_the_rest() {
        let full = repartition(&input(standard())).unwrap();
        let mut fewer = standard();
        fewer.remove(3);
        let smaller = repartition(&input(fewer)).unwrap();
        for r in &smaller.requests {
            let before = full.requests.iter().find(|x| x.id == r.id).unwrap();
            assert!(r.accuracy.unwrap() < before.accuracy.unwrap());
        }
    }

    #[test]
    fn impossible_hold_reports_ids() {
        let mut reqs = standard();
        reqs[0] = reqs[0].clone().with_epsilon(2.0).held();
        match repartition(&input(reqs)) {
            Err(BudgetError::InfeasibleHold(ids)) => assert_eq!(ids, vec!["age-mean".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn swapped_global_rejected() {
        let mut i = input(standard());
        i.global = PrivacyParams {
            epsilon: 1e-6,
            delta: 0.25,
        };
        assert_eq!(
            repartition(&i).unwrap_err().code(),
            "global_params_rejected"
        );
    }

    #[test]
    fn secrecy_of_sample_improves_accuracy() {
        let plain = repartition(&input(standard())).unwrap();
        let mut i = input(standard());
        i.sample = Some(SampleInfo {
            is_secret_sample: true,
            n: 1000,
            m: 1_200_000,
        });
        let boosted = repartition(&i).unwrap();
        for (a, b) in plain.requests.iter().zip(&boosted.requests) {
            assert!(b.accuracy.unwrap() < a.accuracy.unwrap());
        }
    }

    #[test]
    fn confidence_level_widens_radii() {
        let base = repartition(&input(standard())).unwrap();
        let strict: Vec<_> = standard().into_iter().map(|r| r.with_alpha(0.02)).collect();
        let strict = repartition(&input(strict)).unwrap();
        for (a, b) in base.requests.iter().zip(&strict.requests) {
            assert!(b.accuracy.unwrap() > a.accuracy.unwrap());
        }
    }

    #[test]
    fn depositor_share_limits_plan() {
        let mut i = input(standard());
        i.depositor_epsilon = Some(0.4);
        let plan = repartition(&i).unwrap();
        assert!((plan.budget.analyst.epsilon - 0.6).abs() < 1e-12);
        assert!(plan.total.epsilon <= 0.4 * (1.0 + 1e-9));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut reqs = standard();
        reqs[1].id = reqs[0].id.clone();
        assert!(matches!(
            repartition(&input(reqs)),
            Err(BudgetError::DuplicateId(_))
        ));
    }
}
