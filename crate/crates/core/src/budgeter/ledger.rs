use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::{
    BatchCost, BatchLedger, BatchRejection, CompositionRule, DeltaPolicy, PrivacyParams,
};

/// Trust tiers of the actors who spend budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Depositor,
    /// Vetted analysts who each hold a personal budget.
    SemiTrusted,
    /// The public, spending one shared pool.
    Untrusted,
}

/// Who is spending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Actor {
    pub tier: Tier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
}

impl Actor {
    pub fn depositor() -> Self {
        Actor {
            tier: Tier::Depositor,
            user: None,
        }
    }

    pub fn semi_trusted(user: impl Into<String>) -> Self {
        Actor {
            tier: Tier::SemiTrusted,
            user: Some(user.into()),
        }
    }

    pub fn untrusted(user: impl Into<String>) -> Self {
        Actor {
            tier: Tier::Untrusted,
            user: Some(user.into()),
        }
    }

    /// Name of the budget account this actor draws on.
    pub fn account(&self) -> Result<String, LedgerError> {
        match (self.tier, &self.user) {
            (Tier::Depositor, _) => Ok("depositor".into()),
            (Tier::Untrusted, _) => Ok("shared".into()),
            (Tier::SemiTrusted, Some(u)) if !u.is_empty() => Ok(format!("user:{u}")),
            (Tier::SemiTrusted, _) => Err(LedgerError::Tier(
                "a semi-trusted analyst must be identified".into(),
            )),
        }
    }
}

/// Budgets of each account.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountsConfig {
    /// `(ε_d, δ_d)`.
    pub depositor: PrivacyParams,
    /// `(ε_a, δ_a)`.
    pub analyst: PrivacyParams,
    /// Fraction of the analyst budget pooled for untrusted users; the rest
    /// is granted to every semi-trusted user individually.
    pub untrusted_share: f64,
    pub semi_trusted_enabled: bool,
    pub untrusted_enabled: bool,
    /// Cap on `ε` one untrusted user may draw from the pool per hour.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hourly_epsilon_cap: Option<f64>,
    #[serde(default)]
    pub rule: CompositionRule,
    #[serde(default)]
    pub delta_policy: DeltaPolicy,
}

impl AccountsConfig {
    pub fn new(depositor: PrivacyParams, analyst: PrivacyParams) -> Self {
        AccountsConfig {
            depositor,
            analyst,
            untrusted_share: 0.5,
            semi_trusted_enabled: true,
            untrusted_enabled: true,
            hourly_epsilon_cap: None,
            rule: CompositionRule::default(),
            delta_policy: DeltaPolicy::default(),
        }
    }

    fn budget_for(&self, account: &str) -> PrivacyParams {
        let scale = |p: PrivacyParams, f: f64| PrivacyParams {
            epsilon: p.epsilon * f,
            delta: p.delta * f,
        };
        match account {
            "depositor" => self.depositor,
            "shared" => scale(self.analyst, self.untrusted_share),
            _ => scale(self.analyst, 1.0 - self.untrusted_share),
        }
    }

    fn policy_for(&self, account: &str) -> DeltaPolicy {
        DeltaPolicy {
            // The depositor's plan is one batch composed at the full δ_d.
            expected_statistics: if account == "depositor" {
                1
            } else {
                self.delta_policy.expected_statistics
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Deduct,
    Refund,
}

/// One line of the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub op: RecordKind,
    pub account: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    pub batch_id: String,
    pub epsilon: f64,
    pub delta: f64,
    pub statistics: usize,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger I/O: {0}")]
    Io(#[from] io::Error),
    #[error("ledger line {line} is unreadable: {message}")]
    Corrupt { line: usize, message: String },
    #[error("{0}")]
    Tier(String),
    #[error("budget exhausted: {0}")]
    Rejected(BatchRejection),
    #[error("hourly limit: {used} of {cap} epsilon already drawn in the last hour, batch needs {requested}")]
    RateLimited { used: f64, cap: f64, requested: f64 },
    #[error("no batch `{0}` to refund")]
    UnknownBatch(String),
}

impl LedgerError {
    /// Remaining budget, when the error is a budget rejection.
    pub fn remaining(&self) -> Option<PrivacyParams> {
        match self {
            LedgerError::Rejected(BatchRejection::OverBudget { remaining, .. }) => Some(*remaining),
            _ => None,
        }
    }
}

struct State {
    file: File,
    accounts: HashMap<String, BatchLedger>,
    records: Vec<LedgerRecord>,
}

/// Append-only, crash-safe journal of deductions and refunds.
///
/// Every mutation takes one lock, checks the budget, appends a JSON line and
/// syncs it to disk, and only then updates memory. Reopening replays the
/// file; a final line torn by a crash is discarded.
pub struct LedgerStore {
    path: PathBuf,
    config: AccountsConfig,
    state: Mutex<State>,
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl LedgerStore {
    pub fn open(path: impl AsRef<Path>, config: AccountsConfig) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;

        // Keep only complete lines; a torn tail is cut off so the next
        // append starts cleanly.
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        if complete < text.len() {
            file.set_len(complete as u64)?;
            file.seek(SeekFrom::End(0))?;
        }

        let mut state = State {
            file,
            accounts: HashMap::new(),
            records: Vec::new(),
        };
        for (i, line) in BufReader::new(&text.as_bytes()[..complete])
            .lines()
            .enumerate()
        {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: LedgerRecord =
                serde_json::from_str(&line).map_err(|e| LedgerError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            Self::apply(&config, &mut state, &record).map_err(|e| LedgerError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            state.records.push(record);
        }
        Ok(LedgerStore {
            path,
            config,
            state: Mutex::new(state),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn config(&self) -> &AccountsConfig {
        &self.config
    }

    fn ledger<'a>(
        config: &AccountsConfig,
        state: &'a mut State,
        account: &str,
    ) -> &'a mut BatchLedger {
        state
            .accounts
            .entry(account.to_string())
            .or_insert_with(|| {
                BatchLedger::new(
                    config.budget_for(account),
                    config.rule,
                    config.policy_for(account),
                )
            })
    }

    fn apply(
        config: &AccountsConfig,
        state: &mut State,
        record: &LedgerRecord,
    ) -> Result<(), LedgerError> {
        let ledger = Self::ledger(config, state, &record.account);
        match record.op {
            RecordKind::Deduct => {
                ledger
                    .admit(BatchCost {
                        batch_id: record.batch_id.clone(),
                        statistics: record.statistics,
                        cost: PrivacyParams {
                            epsilon: record.epsilon,
                            delta: record.delta,
                        },
                    })
                    .map_err(LedgerError::Rejected)?;
            }
            RecordKind::Refund => {
                ledger
                    .refund(&record.batch_id)
                    .ok_or_else(|| LedgerError::UnknownBatch(record.batch_id.clone()))?;
            }
        }
        Ok(())
    }

    fn check_tier(&self, actor: &Actor) -> Result<(), LedgerError> {
        match actor.tier {
            Tier::SemiTrusted if !self.config.semi_trusted_enabled => {
                Err(LedgerError::Tier("semi-trusted access is disabled".into()))
            }
            Tier::Untrusted if !self.config.untrusted_enabled => {
                Err(LedgerError::Tier("untrusted access is disabled".into()))
            }
            _ => Ok(()),
        }
    }

    /// Prices `batch` against the actor's account without charging it.
    ///
    /// The cost is recomputed from the per-statistic parameters alone; an
    /// error carries the remaining budget.
    pub fn quote(
        &self,
        actor: &Actor,
        batch: &[PrivacyParams],
    ) -> Result<PrivacyParams, LedgerError> {
        self.check_tier(actor)?;
        let account = actor.account()?;
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let ledger = Self::ledger(&self.config, &mut state, &account);
        let cost = ledger
            .price(batch)
            .map_err(|e| LedgerError::Rejected(BatchRejection::Invalid(e)))?;
        if batch.is_empty() {
            return Ok(cost);
        }
        // Real batch ids never contain a NUL.
        ledger
            .clone()
            .admit(BatchCost {
                batch_id: "\0quote".into(),
                statistics: batch.len(),
                cost,
            })
            .map_err(LedgerError::Rejected)?;
        Ok(cost)
    }

    /// Charges `batch` to the actor's account at the current time.
    pub fn deduct(
        &self,
        actor: &Actor,
        batch_id: &str,
        batch: &[PrivacyParams],
    ) -> Result<BatchCost, LedgerError> {
        self.deduct_at(actor, batch_id, batch, now_secs())
    }

    /// As [`deduct`](Self::deduct) with an explicit clock, for the hourly cap.
    pub fn deduct_at(
        &self,
        actor: &Actor,
        batch_id: &str,
        batch: &[PrivacyParams],
        now: u64,
    ) -> Result<BatchCost, LedgerError> {
        self.check_tier(actor)?;
        let account = actor.account()?;
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());

        let ledger = Self::ledger(&self.config, &mut state, &account);
        let cost = ledger
            .price(batch)
            .map_err(|e| LedgerError::Rejected(BatchRejection::Invalid(e)))?;
        if batch.is_empty() {
            return Ok(BatchCost {
                batch_id: batch_id.to_string(),
                statistics: 0,
                cost,
            });
        }
        let entry = BatchCost {
            batch_id: batch_id.to_string(),
            statistics: batch.len(),
            cost,
        };
        // Dry run on a copy so a rejection never reaches the journal.
        ledger
            .clone()
            .admit(entry.clone())
            .map_err(LedgerError::Rejected)?;

        if let (Tier::Untrusted, Some(cap)) = (actor.tier, self.config.hourly_epsilon_cap) {
            let used = self.hourly_usage(&state, &account, actor.user.as_deref(), now);
            if used + cost.epsilon > cap * (1.0 + crate::composition::FEASIBILITY_TOLERANCE) {
                return Err(LedgerError::RateLimited {
                    used,
                    cap,
                    requested: cost.epsilon,
                });
            }
        }

        let record = LedgerRecord {
            op: RecordKind::Deduct,
            account: account.clone(),
            user: actor.user.clone(),
            batch_id: batch_id.to_string(),
            epsilon: cost.epsilon,
            delta: cost.delta,
            statistics: batch.len(),
            timestamp: now,
        };
        Self::append(&mut state.file, &record)?;
        Self::ledger(&self.config, &mut state, &account)
            .admit(entry.clone())
            .map_err(LedgerError::Rejected)?;
        state.records.push(record);
        Ok(entry)
    }

    fn hourly_usage(&self, state: &State, account: &str, user: Option<&str>, now: u64) -> f64 {
        let live: Vec<&str> = state
            .accounts
            .get(account)
            .map(|l| l.batches().iter().map(|b| b.batch_id.as_str()).collect())
            .unwrap_or_default();
        state
            .records
            .iter()
            .filter(|r| {
                r.op == RecordKind::Deduct
                    && r.account == account
                    && r.user.as_deref() == user
                    && now.saturating_sub(r.timestamp) < 3600
                    && live.contains(&r.batch_id.as_str())
            })
            .map(|r| r.epsilon)
            .sum()
    }

    /// Returns a batch's cost to its account, e.g. after a failed release.
    pub fn refund(&self, actor: &Actor, batch_id: &str) -> Result<BatchCost, LedgerError> {
        let account = actor.account()?;
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let entry = state
            .accounts
            .get(&account)
            .and_then(|l| l.batches().iter().find(|b| b.batch_id == batch_id).cloned())
            .ok_or_else(|| LedgerError::UnknownBatch(batch_id.to_string()))?;
        let record = LedgerRecord {
            op: RecordKind::Refund,
            account: account.clone(),
            user: actor.user.clone(),
            batch_id: batch_id.to_string(),
            epsilon: entry.cost.epsilon,
            delta: entry.cost.delta,
            statistics: entry.statistics,
            timestamp: now_secs(),
        };
        Self::append(&mut state.file, &record)?;
        Self::ledger(&self.config, &mut state, &account).refund(batch_id);
        state.records.push(record);
        Ok(entry)
    }

    fn append(file: &mut File, record: &LedgerRecord) -> Result<(), LedgerError> {
        let mut line = serde_json::to_string(record).map_err(io::Error::other)?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        Ok(())
    }

    /// Budget still available to `actor`.
    pub fn remaining(&self, actor: &Actor) -> Result<PrivacyParams, LedgerError> {
        let account = actor.account()?;
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        Ok(Self::ledger(&self.config, &mut state, &account).remaining())
    }

    /// Accepted batches of every account, keyed by account.
    pub fn accounts(&self) -> HashMap<String, Vec<BatchCost>> {
        let state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        state
            .accounts
            .iter()
            .map(|(k, v)| (k.clone(), v.batches().to_vec()))
            .collect()
    }

    /// The journal as replayed or written so far.
    pub fn records(&self) -> Vec<LedgerRecord> {
        self.state
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .records
            .clone()
    }

    /// Budget each account was opened with.
    pub fn account_budget(&self, actor: &Actor) -> Result<PrivacyParams, LedgerError> {
        Ok(self.config.budget_for(&actor.account()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn config() -> AccountsConfig {
        AccountsConfig::new(
            PrivacyParams::new(0.5, 1e-7).unwrap(),
            PrivacyParams::new(1.0, 1e-7).unwrap(),
        )
    }

    fn pure(eps: &[f64]) -> Vec<PrivacyParams> {
        eps.iter().map(|&e| PrivacyParams::pure(e)).collect()
    }

    #[test]
    fn exact_remaining_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let store = LedgerStore::open(dir.path().join("l.ndjson"), config()).unwrap();
        let d = Actor::depositor();
        store.deduct(&d, "b1", &pure(&[0.5])).unwrap();
        assert_eq!(store.remaining(&d).unwrap().epsilon, 0.0);
        let err = store.deduct(&d, "b2", &pure(&[1e-9])).unwrap_err();
        assert_eq!(err.remaining().unwrap().epsilon, 0.0);
    }

    #[test]
    fn per_user_budgets_are_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let store = LedgerStore::open(dir.path().join("l.ndjson"), config()).unwrap();
        let (a, b) = (Actor::semi_trusted("alice"), Actor::semi_trusted("bob"));
        store.deduct(&a, "a1", &pure(&[0.5])).unwrap();
        assert!(store.deduct(&a, "a2", &pure(&[0.01])).is_err());
        assert!(store.deduct(&b, "b1", &pure(&[0.5])).is_ok());
    }

    #[test]
    fn replay_restores_state_and_refunds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.ndjson");
        let u = Actor::untrusted("eve");
        {
            let store = LedgerStore::open(&path, config()).unwrap();
            store.deduct(&u, "x", &pure(&[0.2])).unwrap();
            store.deduct(&u, "y", &pure(&[0.2])).unwrap();
            store.refund(&u, "x").unwrap();
        }
        let store = LedgerStore::open(&path, config()).unwrap();
        assert!((store.remaining(&u).unwrap().epsilon - 0.3).abs() < 1e-12);
        assert_eq!(store.records().len(), 3);
    }

    #[test]
    fn torn_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.ndjson");
        let d = Actor::depositor();
        {
            let store = LedgerStore::open(&path, config()).unwrap();
            store.deduct(&d, "ok", &pure(&[0.1])).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"op":"deduct","account":"depos"#).unwrap();
        drop(f);
        let store = LedgerStore::open(&path, config()).unwrap();
        assert_eq!(store.records().len(), 1);
        store.deduct(&d, "next", &pure(&[0.1])).unwrap();
        drop(store);
        let store = LedgerStore::open(&path, config()).unwrap();
        assert_eq!(store.records().len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.ndjson");
        std::fs::write(&path, "garbage\n").unwrap();
        assert!(matches!(
            LedgerStore::open(&path, config()),
            Err(LedgerError::Corrupt { line: 1, .. })
        ));
    }

    #[test]
    fn shared_pool_race_has_one_winner() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(LedgerStore::open(dir.path().join("l.ndjson"), config()).unwrap());
        // Shared pool is ε = 0.5; each racer wants 0.3.
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let store = Arc::clone(&store);
                std::thread::spawn(move || {
                    store
                        .deduct(
                            &Actor::untrusted(format!("u{i}")),
                            &format!("b{i}"),
                            &pure(&[0.3]),
                        )
                        .is_ok()
                })
            })
            .collect();
        let wins = handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .filter(|&w| w)
            .count();
        assert_eq!(wins, 1);
    }

    #[test]
    fn hourly_cap() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config();
        cfg.hourly_epsilon_cap = Some(0.15);
        let store = LedgerStore::open(dir.path().join("l.ndjson"), cfg).unwrap();
        let u = Actor::untrusted("eve");
        store.deduct_at(&u, "1", &pure(&[0.1]), 1000).unwrap();
        assert!(matches!(
            store.deduct_at(&u, "2", &pure(&[0.1]), 2000),
            Err(LedgerError::RateLimited { .. })
        ));
        // Another user is not affected, and the window slides.
        store
            .deduct_at(&Actor::untrusted("mallory"), "3", &pure(&[0.1]), 2000)
            .unwrap();
        store
            .deduct_at(&u, "4", &pure(&[0.1]), 1000 + 3600)
            .unwrap();
    }

    #[test]
    fn disabled_tier_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config();
        cfg.untrusted_enabled = false;
        let store = LedgerStore::open(dir.path().join("l.ndjson"), cfg).unwrap();
        assert!(matches!(
            store.deduct(&Actor::untrusted("x"), "b", &pure(&[0.1])),
            Err(LedgerError::Tier(_))
        ));
        assert!(matches!(
            store.deduct(
                &Actor {
                    tier: Tier::SemiTrusted,
                    user: None
                },
                "b",
                &pure(&[0.1])
            ),
            Err(LedgerError::Tier(_))
        ));
    }
}
