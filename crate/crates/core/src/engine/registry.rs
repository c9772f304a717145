use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::metadata::{
    build_public_metadata, build_user_metadata, Audience, MetadataFile, ReleaseRecord,
};
use super::release::{execute_release, ReleaseBatch, ReleaseOutcome};
use super::{ingest_csv, Dataset, EngineError, IngestReport};
use crate::budgeter::{
    amplify_budget, split_budget, vet_global_params, AccountsConfig, Actor, GlobalBudget,
    LedgerStore, SampleInfo,
};
use crate::composition::{CompositionRule, DeltaPolicy, PrivacyParams};
use crate::mechanisms::VariableSpec;
use crate::rng::NoiseRng;

const DATA_FILE: &str = "data.csv";
const SCHEMA_FILE: &str = "schema.json";
const BUDGET_FILE: &str = "budget.json";
const LEDGER_FILE: &str = "ledger.ndjson";
const RELEASES_FILE: &str = "releases.ndjson";
const INFO_FILE: &str = "info.json";

/// Public facts about a stored dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DatasetInfo {
    n: usize,
}

/// The depositor's budget choices for one dataset, stored as `budget.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub global: PrivacyParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleInfo>,
    /// `ε_d`; the whole effective budget when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depositor_epsilon: Option<f64>,
    #[serde(default = "default_share")]
    pub untrusted_share: f64,
    #[serde(default = "default_true")]
    pub semi_trusted_enabled: bool,
    #[serde(default = "default_true")]
    pub untrusted_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hourly_epsilon_cap: Option<f64>,
    #[serde(default)]
    pub rule: CompositionRule,
    #[serde(default)]
    pub delta_policy: DeltaPolicy,
}

fn default_share() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

impl BudgetConfig {
    pub fn new(global: PrivacyParams) -> Self {
        BudgetConfig {
            global,
            sample: None,
            depositor_epsilon: None,
            untrusted_share: default_share(),
            semi_trusted_enabled: true,
            untrusted_enabled: true,
            hourly_epsilon_cap: None,
            rule: CompositionRule::default(),
            delta_policy: DeltaPolicy::default(),
        }
    }

    pub fn with_depositor_epsilon(mut self, eps: f64) -> Self {
        self.depositor_epsilon = Some(eps);
        self
    }

    /// Vets the global parameters and splits the effective budget.
    pub fn split(&self) -> Result<GlobalBudget, EngineError> {
        vet_global_params(self.global.epsilon, self.global.delta)?;
        if !(0.0..=1.0).contains(&self.untrusted_share) {
            return Err(EngineError::Invalid(format!(
                "untrusted_share must lie in [0, 1], got {}",
                self.untrusted_share
            )));
        }
        let effective = match &self.sample {
            Some(s) => amplify_budget(self.global, s)?,
            None => self.global,
        };
        Ok(split_budget(
            self.global,
            effective,
            self.depositor_epsilon.unwrap_or(effective.epsilon),
        )?)
    }

    pub fn accounts(&self) -> Result<AccountsConfig, EngineError> {
        let budget = self.split()?;
        let mut accounts = AccountsConfig::new(budget.depositor, budget.analyst);
        accounts.untrusted_share = self.untrusted_share;
        accounts.semi_trusted_enabled = self.semi_trusted_enabled;
        accounts.untrusted_enabled = self.untrusted_enabled;
        accounts.hourly_epsilon_cap = self.hourly_epsilon_cap;
        accounts.rule = self.rule;
        accounts.delta_policy = self.delta_policy;
        Ok(accounts)
    }
}

/// Service-level settings that take precedence over each dataset's own.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AccessOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semi_trusted_enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub untrusted_enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hourly_epsilon_cap: Option<f64>,
}

impl AccessOverrides {
    fn apply(&self, c: &mut AccountsConfig) {
        if let Some(v) = self.semi_trusted_enabled {
            c.semi_trusted_enabled = v;
        }
        if let Some(v) = self.untrusted_enabled {
            c.untrusted_enabled = v;
        }
        if self.hourly_epsilon_cap.is_some() {
            c.hourly_epsilon_cap = self.hourly_epsilon_cap;
        }
    }
}

fn check_dataset_id(id: &str) -> Result<(), EngineError> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(EngineError::Invalid(format!(
            "dataset id `{}` must be 1-64 characters from [A-Za-z0-9-_.] and not start with a dot",
            id.escape_debug()
        )))
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), EngineError> {
    let tmp = path.with_extension("json.tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
    f.write_all(b"\n")?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, EngineError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Datasets stored under one directory, one subdirectory each:
/// `data.csv`, `schema.json`, `info.json`, `budget.json`, `ledger.ndjson`
/// and `releases.ndjson`.
pub struct Registry {
    root: PathBuf,
    overrides: AccessOverrides,
    open: Mutex<HashMap<String, Arc<DatasetHandle>>>,
}

impl Registry {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, EngineError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Registry {
            root,
            overrides: AccessOverrides::default(),
            open: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_overrides(mut self, overrides: AccessOverrides) -> Self {
        self.overrides = overrides;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf, EngineError> {
        check_dataset_id(id)?;
        Ok(self.root.join(id))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.dir(id)
            .map(|d| d.join(SCHEMA_FILE).exists())
            .unwrap_or(false)
    }

    /// Ids of every registered dataset, sorted.
    pub fn list(&self) -> Result<Vec<String>, EngineError> {
        let mut ids: Vec<String> = fs::read_dir(&self.root)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| self.contains(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Validates `csv` against `schema` and stores both.
    ///
    /// An existing id is refused unless `force`; forcing replaces the data
    /// and schema but keeps the ledger and releases, so spent budget stays
    /// spent.
    pub fn ingest(
        &self,
        id: &str,
        csv: impl AsRef<Path>,
        schema: Vec<VariableSpec>,
        force: bool,
    ) -> Result<IngestReport, EngineError> {
        let dir = self.dir(id)?;
        if self.contains(id) && !force {
            return Err(EngineError::DatasetExists(id.to_string()));
        }
        let dataset = ingest_csv(id, csv.as_ref(), schema)?;
        fs::create_dir_all(&dir)?;
        let tmp = dir.join("data.csv.tmp");
        fs::copy(csv.as_ref(), &tmp)?;
        File::open(&tmp)?.sync_all()?;
        fs::rename(&tmp, dir.join(DATA_FILE))?;
        write_json_atomic(&dir.join(INFO_FILE), &DatasetInfo { n: dataset.n() })?;
        write_json_atomic(&dir.join(SCHEMA_FILE), &dataset.schema())?;
        self.open
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(id);
        Ok(dataset.report().clone())
    }

    /// Stores the budget. Once anything has been spent it can no longer be
    /// changed.
    pub fn set_budget(&self, id: &str, budget: &BudgetConfig) -> Result<GlobalBudget, EngineError> {
        let dir = self.dir(id)?;
        if !self.contains(id) {
            return Err(EngineError::UnknownDataset(id.to_string()));
        }
        let split = budget.split()?;
        let ledger = dir.join(LEDGER_FILE);
        if ledger.exists() && fs::metadata(&ledger)?.len() > 0 {
            let current: Option<BudgetConfig> = read_json(&dir.join(BUDGET_FILE)).ok();
            if current.as_ref() != Some(budget) {
                return Err(EngineError::BudgetLocked(id.to_string()));
            }
        }
        write_json_atomic(&dir.join(BUDGET_FILE), budget)?;
        self.open
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(id);
        Ok(split)
    }

    pub fn schema(&self, id: &str) -> Result<Vec<VariableSpec>, EngineError> {
        let dir = self.dir(id)?;
        if !self.contains(id) {
            return Err(EngineError::UnknownDataset(id.to_string()));
        }
        read_json(&dir.join(SCHEMA_FILE))
    }

    /// Number of records, which is public; needs no budget.
    pub fn record_count(&self, id: &str) -> Result<usize, EngineError> {
        let dir = self.dir(id)?;
        if !self.contains(id) {
            return Err(EngineError::UnknownDataset(id.to_string()));
        }
        let info: DatasetInfo = read_json(&dir.join(INFO_FILE))?;
        Ok(info.n)
    }

    /// Loads a dataset, its ledger and its releases; cached after the
    /// first call.
    pub fn open(&self, id: &str) -> Result<Arc<DatasetHandle>, EngineError> {
        let dir = self.dir(id)?;
        let mut open = self.open.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(h) = open.get(id) {
            return Ok(Arc::clone(h));
        }
        if !self.contains(id) {
            return Err(EngineError::UnknownDataset(id.to_string()));
        }
        let schema: Vec<VariableSpec> = read_json(&dir.join(SCHEMA_FILE))?;
        let budget_path = dir.join(BUDGET_FILE);
        if !budget_path.exists() {
            return Err(EngineError::NoBudget(id.to_string()));
        }
        let budget: BudgetConfig = read_json(&budget_path)?;
        let mut accounts = budget.accounts()?;
        self.overrides.apply(&mut accounts);
        let dataset = ingest_csv(id, dir.join(DATA_FILE), schema)?;
        let ledger = LedgerStore::open(dir.join(LEDGER_FILE), accounts)?;
        let releases = ReleaseLog::open(&dir.join(RELEASES_FILE))?;
        let handle = Arc::new(DatasetHandle {
            dataset,
            budget,
            ledger,
            releases: Mutex::new(releases),
        });
        open.insert(id.to_string(), Arc::clone(&handle));
        Ok(handle)
    }
}

struct ReleaseLog {
    file: File,
    records: Vec<ReleaseRecord>,
}

impl ReleaseLog {
    fn open(path: &Path) -> Result<Self, EngineError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        if complete < text.len() {
            file.set_len(complete as u64)?;
        }
        let records = text[..complete]
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(ReleaseRecord::from_json)
            .collect::<Result<_, _>>()?;
        Ok(ReleaseLog { file, records })
    }

    fn append(&mut self, new: &[ReleaseRecord]) -> Result<(), EngineError> {
        let mut buf = String::new();
        for r in new {
            buf.push_str(&serde_json::to_string(r)?);
            buf.push('\n');
        }
        self.file.write_all(buf.as_bytes())?;
        self.file.sync_data()?;
        self.records.extend_from_slice(new);
        Ok(())
    }
}

/// An open dataset. Releases on one handle are serialized; reads share it.
pub struct DatasetHandle {
    dataset: Dataset,
    budget: BudgetConfig,
    ledger: LedgerStore,
    releases: Mutex<ReleaseLog>,
}

impl DatasetHandle {
    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn budget(&self) -> &BudgetConfig {
        &self.budget
    }

    pub fn ledger(&self) -> &LedgerStore {
        &self.ledger
    }

    pub fn remaining(&self, actor: &Actor) -> Result<PrivacyParams, EngineError> {
        Ok(self.ledger.remaining(actor)?)
    }

    /// Runs a batch and appends its records to the release log.
    pub fn release(
        &self,
        actor: &Actor,
        batch: &ReleaseBatch,
        rng: &mut NoiseRng,
    ) -> Result<ReleaseOutcome, EngineError> {
        self.release_at(actor, batch, rng, now_secs())
    }

    pub fn release_at(
        &self,
        actor: &Actor,
        batch: &ReleaseBatch,
        rng: &mut NoiseRng,
        now: u64,
    ) -> Result<ReleaseOutcome, EngineError> {
        let mut log = self.releases.lock().unwrap_or_else(|e| e.into_inner());
        let outcome = execute_release(&self.dataset, batch, &self.ledger, actor, rng, now)?;
        log.append(&outcome.records)?;
        Ok(outcome)
    }

    pub fn public_metadata(&self) -> Result<MetadataFile, EngineError> {
        let log = self.releases.lock().unwrap_or_else(|e| e.into_inner());
        let public: Vec<ReleaseRecord> = log
            .records
            .iter()
            .filter(|r| r.audience() == &Audience::Public)
            .cloned()
            .collect();
        build_public_metadata(
            self.dataset.id(),
            self.dataset.n(),
            self.dataset.schema(),
            &public,
        )
    }

    pub fn user_metadata(&self, user: &str) -> Result<MetadataFile, EngineError> {
        let own = Audience::User(user.to_string());
        let log = self.releases.lock().unwrap_or_else(|e| e.into_inner());
        let visible: Vec<ReleaseRecord> = log
            .records
            .iter()
            .filter(|r| r.audience() == &Audience::Public || r.audience() == &own)
            .cloned()
            .collect();
        build_user_metadata(
            self.dataset.id(),
            self.dataset.n(),
            self.dataset.schema(),
            &visible,
            user,
        )
    }
}
