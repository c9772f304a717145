//! Service configuration: a TOML file plus `DPRELEASE_*` environment
//! overrides.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! data_dir = "/var/lib/dprelease"
//!
//! [access]
//! untrusted_enabled = true
//! hourly_epsilon_cap = 0.05
//!
//! [tokens.9f3c1e]
//! tier = "semi_trusted"
//! user = "alice"
//! datasets = ["acs-2017"]
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use dprelease::budgeter::{Actor, Tier};
use dprelease::engine::AccessOverrides;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment variable {name}: {message}")]
    Env { name: &'static str, message: String },
    #[error("token `{token}`: {message}")]
    Token { token: String, message: String },
}

/// What a bearer token grants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenGrant {
    pub tier: Tier,
    /// Required for analysts; ledgers and rate limits are per user.
    #[serde(default)]
    pub user: Option<String>,
    /// Datasets the token may touch; all when absent.
    #[serde(default)]
    pub datasets: Option<Vec<String>>,
}

impl TokenGrant {
    pub fn actor(&self) -> Actor {
        Actor {
            tier: self.tier,
            user: self.user.clone(),
        }
    }

    pub fn allows(&self, dataset: &str) -> bool {
        self.datasets
            .as_ref()
            .is_none_or(|ds| ds.iter().any(|d| d == dataset))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub data_dir: PathBuf,
    #[serde(default)]
    pub access: AccessOverrides,
    #[serde(default)]
    pub tokens: HashMap<String, TokenGrant>,
}

fn default_listen() -> String {
    DEFAULT_LISTEN.to_string()
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            listen: default_listen(),
            data_dir: data_dir.into(),
            access: AccessOverrides::default(),
            tokens: HashMap::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ServiceConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` and applies the process environment on top.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    /// Overrides from `DPRELEASE_LISTEN`, `DPRELEASE_DATA_DIR`,
    /// `DPRELEASE_SEMI_TRUSTED_ENABLED`, `DPRELEASE_UNTRUSTED_ENABLED` and
    /// `DPRELEASE_HOURLY_EPSILON_CAP`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get("DPRELEASE_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = get("DPRELEASE_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = get("DPRELEASE_SEMI_TRUSTED_ENABLED") {
            self.access.semi_trusted_enabled =
                Some(parse_env("DPRELEASE_SEMI_TRUSTED_ENABLED", &v)?);
        }
        if let Some(v) = get("DPRELEASE_UNTRUSTED_ENABLED") {
            self.access.untrusted_enabled = Some(parse_env("DPRELEASE_UNTRUSTED_ENABLED", &v)?);
        }
        if let Some(v) = get("DPRELEASE_HOURLY_EPSILON_CAP") {
            let cap: f64 = parse_env("DPRELEASE_HOURLY_EPSILON_CAP", &v)?;
            if !(cap.is_finite() && cap > 0.0) {
                return Err(ConfigError::Env {
                    name: "DPRELEASE_HOURLY_EPSILON_CAP",
                    message: format!("must be a positive number, got {v}"),
                });
            }
            self.access.hourly_epsilon_cap = Some(cap);
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        for (token, grant) in &self.tokens {
            let bad = |message: &str| ConfigError::Token {
                token: token.chars().take(4).collect::<String>() + "...",
                message: message.to_string(),
            };
            if token.len() < 6 {
                return Err(bad("tokens must be at least 6 characters"));
            }
            match (grant.tier, &grant.user) {
                (Tier::Depositor, _) => {}
                (_, Some(u)) if !u.is_empty() => {}
                _ => return Err(bad("analyst tokens need a user")),
            }
        }
        Ok(())
    }
}

fn parse_env<T: std::str::FromStr>(name: &'static str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse().map_err(|e: T::Err| ConfigError::Env {
        name,
        message: e.to_string(),
    })
}
