//! Configuration of the `serve` command (TOML, `schema_version = 1`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{OracleSpec, VictimSpec, SCHEMA_VERSION};
use crate::error::{MexError, Result};
use crate::gateway::AccountConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub schema_version: u32,
    /// `host:port`; port 0 picks a free port.
    pub bind: String,
    /// A trained or checkpoint victim; remote victims are not served.
    pub victim: VictimSpec,
    pub budget: ServeBudget,
    pub accounts: Vec<AccountConfig>,
    #[serde(default)]
    pub oracle: OracleSpec,
    /// Response cache loaded at start-up.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    /// JSON-lines query log.
    #[serde(default)]
    pub log: Option<PathBuf>,
}

/// Budget shared by all accounts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeBudget {
    pub batches: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    64
}

impl GatewayConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GatewayConfig = toml::from_str(text).map_err(|e| MexError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(MexError::Config(format!("unsupported schema_version {}", cfg.schema_version)));
        }
        if cfg.accounts.is_empty() {
            return Err(MexError::Config("at least one account is required".into()));
        }
        if matches!(cfg.victim, VictimSpec::Remote { .. }) {
            return Err(MexError::Config("the gateway needs a local victim".into()));
        }
        for a in &cfg.accounts {
            a.policy.validate()?;
            if !(a.rate_limit > 0.0) {
                return Err(MexError::Config(format!("account {}: rate limit must be positive", a.key)));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MexError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            match &mut cfg.victim {
                VictimSpec::Checkpoint { path } => fix(path),
                VictimSpec::Trained { data: super::config::DataSource::Csv { path, .. }, .. } => fix(path),
                _ => {}
            }
            if let Some(p) = &mut cfg.cache {
                fix(p);
            }
            if let Some(p) = &mut cfg.log {
                fix(p);
            }
        }
        Ok(cfg)
    }
}
