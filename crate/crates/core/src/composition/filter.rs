use serde::{Deserialize, Serialize};

use super::{
    basic_compose, composed_epsilon, within, CompositionError, CompositionRule, PrivacyParams,
};

/// How the global `δ` is apportioned among batches.
///
/// A batch of `k` statistics may spend up to `δ_g·k / expected_statistics`
/// on top of its own `δᵢ` floor to tighten its composed `ε`, capped by what
/// is left. Single-statistic batches get no share, so a ledger of them is
/// plain basic composition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaPolicy {
    pub expected_statistics: usize,
}

impl Default for DeltaPolicy {
    fn default() -> Self {
        DeltaPolicy {
            expected_statistics: 100,
        }
    }
}

/// The collapsed cost of one accepted batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchCost {
    pub batch_id: String,
    pub statistics: usize,
    pub cost: PrivacyParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchRejection {
    /// The batch fits nowhere; `cost` is its cheapest price.
    OverBudget {
        cost: PrivacyParams,
        remaining: PrivacyParams,
    },
    Invalid(CompositionError),
    DuplicateBatch(String),
}

impl std::fmt::Display for BatchRejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BatchRejection::OverBudget { cost, remaining } => write!(
                f,
                "batch costs (ε={}, δ={}) but only (ε={}, δ={}) remains",
                cost.epsilon, cost.delta, remaining.epsilon, remaining.delta
            ),
            BatchRejection::Invalid(e) => write!(f, "{e}"),
            BatchRejection::DuplicateBatch(id) => write!(f, "batch {id} is already recorded"),
        }
    }
}

impl std::error::Error for BatchRejection {}

/// Privacy filter over adaptively chosen batches.
///
/// Within a batch the statistics are fixed in advance, so optimal
/// composition applies; across batches only basic composition is sound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLedger {
    global: PrivacyParams,
    rule: CompositionRule,
    policy: DeltaPolicy,
    batches: Vec<BatchCost>,
}

impl BatchLedger {
    pub fn new(global: PrivacyParams, rule: CompositionRule, policy: DeltaPolicy) -> Self {
        BatchLedger {
            global,
            rule,
            policy,
            batches: Vec::new(),
        }
    }

    pub fn global(&self) -> PrivacyParams {
        self.global
    }

    pub fn rule(&self) -> CompositionRule {
        self.rule
    }

    pub fn batches(&self) -> &[BatchCost] {
        &self.batches
    }

    pub fn spent(&self) -> PrivacyParams {
        let costs: Vec<_> = self.batches.iter().map(|b| b.cost).collect();
        basic_compose(&costs)
    }

    pub fn remaining(&self) -> PrivacyParams {
        let spent = self.spent();
        PrivacyParams {
            epsilon: (self.global.epsilon - spent.epsilon).max(0.0),
            delta: (self.global.delta - spent.delta).max(0.0),
        }
    }

    /// What `batch` would cost now, without recording it.
    pub fn price(&self, batch: &[PrivacyParams]) -> Result<PrivacyParams, CompositionError> {
        for p in batch {
            p.validate()?;
        }
        if batch.is_empty() {
            return Ok(PrivacyParams::pure(0.0));
        }
        let floor = -batch
            .iter()
            .map(|p| (-p.delta).ln_1p())
            .sum::<f64>()
            .exp_m1();
        let basic = basic_compose(batch);
        let floor = floor.min(basic.delta);
        if batch.len() == 1 || self.rule == CompositionRule::Basic {
            return Ok(basic);
        }
        let remaining_delta = self.remaining().delta;
        let pro_rata =
            self.global.delta * batch.len() as f64 / self.policy.expected_statistics.max(1) as f64;
        let share = pro_rata.min(remaining_delta - floor).max(0.0);
        let delta = floor + share;
        let eps = composed_epsilon(batch, delta, self.rule)?;
        Ok(PrivacyParams {
            epsilon: eps.min(basic.epsilon),
            delta,
        })
    }

    /// Accepts `batch` under `batch_id` if its price fits the remaining
    /// budget. A rejection leaves the ledger untouched.
    pub fn filter_compose(
        &mut self,
        batch_id: &str,
        batch: &[PrivacyParams],
    ) -> Result<BatchCost, BatchRejection> {
        let cost = self.price(batch).map_err(BatchRejection::Invalid)?;
        if batch.is_empty() {
            return Ok(BatchCost {
                batch_id: batch_id.to_string(),
                statistics: 0,
                cost,
            });
        }
        self.admit(BatchCost {
            batch_id: batch_id.to_string(),
            statistics: batch.len(),
            cost,
        })
    }

    /// Records an already priced batch, e.g. when replaying a journal.
    pub fn admit(&mut self, entry: BatchCost) -> Result<BatchCost, BatchRejection> {
        if self.batches.iter().any(|b| b.batch_id == entry.batch_id) {
            return Err(BatchRejection::DuplicateBatch(entry.batch_id));
        }
        let spent = self.spent();
        let fits = within(spent.epsilon + entry.cost.epsilon, self.global.epsilon)
            && within(spent.delta + entry.cost.delta, self.global.delta);
        if !fits {
            return Err(BatchRejection::OverBudget {
                cost: entry.cost,
                remaining: self.remaining(),
            });
        }
        self.batches.push(entry.clone());
        Ok(entry)
    }

    /// Removes a recorded batch, returning its cost to the pool.
    pub fn refund(&mut self, batch_id: &str) -> Option<BatchCost> {
        let pos = self.batches.iter().position(|b| b.batch_id == batch_id)?;
        Some(self.batches.remove(pos))
    }
}
