//! Declarative experiment configuration (TOML, `schema_version = 1`).
//! Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mexkit_core::data::GlyphConfig;
use mexkit_core::nn::{InputShape, Init};
use mexkit_core::strategies::{AdversarialConfig, AttackMethod, Ratio};
use mexkit_core::trainer::{AugmentConfig, MixMatchConfig, OptimizerConfig, OptimizerKind, Task};
use mexkit_core::ResponsePolicy;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{MexError, Result};
use crate::oracle::{CostModel, VarianceGate};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    pub victim: VictimSpec,
    pub data: DatasetSpec,
    #[serde(default)]
    pub policy: ResponsePolicy,
    #[serde(default)]
    pub strategy: StrategySpec,
    pub budget: BudgetSpec,
    #[serde(default)]
    pub trainer: TrainerSpec,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
}

/// Where the victim comes from: trained here on labeled data, or loaded
/// from a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VictimSpec {
    Trained {
        architecture: String,
        data: DataSource,
        #[serde(default = "default_victim_epochs")]
        epochs: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        optimizer: Option<OptimizerSpec>,
    },
    Checkpoint {
        path: PathBuf,
    },
    /// A victim behind a gateway. Attack queries use `key`; evaluation
    /// queries use `evaluation_key` when set.
    Remote {
        endpoint: String,
        key: String,
        #[serde(default)]
        evaluation_key: Option<String>,
        classes: usize,
    },
}

fn default_victim_epochs() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Synthetic glyph images, see [`GlyphConfig`].
    Glyphs {
        samples: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        glyph: GlyphConfig,
    },
    /// Comma-separated feature rows, optionally ending in an integer label.
    Csv {
        path: PathBuf,
        /// `[channels, height, width]`, or `[features]` for flat inputs.
        shape: Vec<usize>,
        classes: usize,
        #[serde(default)]
        labeled: bool,
    },
}

impl DataSource {
    pub fn shape(&self) -> Result<InputShape> {
        match self {
            DataSource::Glyphs { glyph, .. } => Ok(glyph.shape()),
            DataSource::Csv { shape, .. } => match shape.as_slice() {
                [n] => Ok(InputShape::flat(*n)),
                [c, h, w] => Ok(InputShape::image(*c, *h, *w)),
                _ => Err(MexError::Config("shape must have 1 or 3 entries".into())),
            },
        }
    }
}

/// The attacker's data: split into a reference pool to query and a held-out
/// test set for the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_split() -> f64 {
    0.8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyName {
    Basic,
    ActiveKCenter,
    AdversarialPgd,
    AdversarialCw,
    Mixed(Ratio),
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyName::Basic => f.write_str("basic"),
            StrategyName::ActiveKCenter => f.write_str("active_kcenter"),
            StrategyName::AdversarialPgd => f.write_str("adversarial_pgd"),
            StrategyName::AdversarialCw => f.write_str("adversarial_cw"),
            StrategyName::Mixed(r) => write!(f, "mixed({}:{})", r.adversarial, r.clean),
        }
    }
}

impl FromStr for StrategyName {
    type Err = MexError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "basic" => StrategyName::Basic,
            "active_kcenter" => StrategyName::ActiveKCenter,
            "adversarial_pgd" => StrategyName::AdversarialPgd,
            "adversarial_cw" => StrategyName::AdversarialCw,
            _ => match s.strip_prefix("mixed(").and_then(|r| r.strip_suffix(')')) {
                Some(ratio) => StrategyName::Mixed(ratio.parse()?),
                None => {
                    return Err(MexError::Config(format!(
                        "unknown strategy '{s}' (basic, active_kcenter, adversarial_pgd, adversarial_cw, mixed(A:C))"
                    )))
                }
            },
        })
    }
}

impl Serialize for StrategyName {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StrategyName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub name: StrategyName,
    /// Generator for the adversarial part of `adversarial_*` and `mixed`.
    #[serde(default)]
    pub adversarial: AdversarialConfig,
}

impl Default for StrategySpec {
    fn default() -> Self {
        Self {
            name: StrategyName::Basic,
            adversarial: AdversarialConfig::default(),
        }
    }
}

impl StrategySpec {
    /// The adversarial generator with its method pinned by the strategy name.
    pub fn adversarial_config(&self) -> AdversarialConfig {
        let mut cfg = self.adversarial.clone();
        match self.name {
            StrategyName::AdversarialPgd => cfg.method = AttackMethod::Pgd,
            StrategyName::AdversarialCw => cfg.method = AttackMethod::Cw,
            _ => {}
        }
        cfg
    }
}

/// Number of query batches, or `"full"` for one pass over the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batches {
    Full,
    Count(usize),
}

impl fmt::Display for Batches {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Batches::Full => f.write_str("full"),
            Batches::Count(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for Batches {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Batches::Full => s.serialize_str("full"),
            Batches::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Batches {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(Batches::Count(n as usize)),
            Raw::Name(s) if s == "full" => Ok(Batches::Full),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "budget batches must be a count or \"full\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub batches: Batches,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    64
}

impl BudgetSpec {
    /// Total queries the attack may bill against a pool of `pool` inputs.
    pub fn queries(&self, pool: usize) -> usize {
        match self.batches {
            Batches::Full => pool,
            Batches::Count(n) => n * self.batch_size,
        }
    }
}

/// Optimizer by name; unset fields take the per-task defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub name: OptimizerKind,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub betas: Option<(f64, f64)>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
}

impl OptimizerSpec {
    pub fn resolve(&self, task: Task) -> Result<OptimizerConfig> {
        let mut cfg = OptimizerConfig::defaults(self.name, task);
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        if let Some(b) = self.betas {
            cfg.betas = b;
        }
        if let Some(wd) = self.weight_decay {
            cfg.weight_decay = wd;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            name: OptimizerKind::Adam,
            learning_rate: None,
            betas: None,
            weight_decay: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSpec {
    pub architecture: String,
    pub init: Init,
    pub task: Task,
    pub optimizer: OptimizerSpec,
    /// Epochs of the final pass once the budget is spent.
    pub epochs: usize,
    /// Warm-start epochs on the cumulative pairs after each round.
    pub round_epochs: usize,
    pub batch_size: usize,
    pub augment: AugmentConfig,
    /// Present to train with MixMatch, using unqueried pool inputs as the
    /// unlabeled set.
    pub mixmatch: Option<MixMatchConfig>,
}

impl Default for TrainerSpec {
    fn default() -> Self {
        Self {
            architecture: "cnn-8".into(),
            init: Init::Scratch,
            task: Task::Vision,
            optimizer: OptimizerSpec::default(),
            epochs: 200,
            round_epochs: 1,
            batch_size: 64,
            augment: AugmentConfig::default(),
            mixmatch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSpec {
    /// Policy the victim's reference predictions are taken under.
    pub policy: ResponsePolicy,
    /// Record test fidelity in the training trace every this many epochs
    /// (0 disables).
    pub trace_every: usize,
    /// Adversarial fidelity generator; `None` skips the metric. Ignored for
    /// non-continuous data.
    pub adversarial: Option<AdversarialConfig>,
    /// Cap on test inputs used for adversarial fidelity.
    pub adversarial_samples: Option<usize>,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            policy: ResponsePolicy::Full,
            trace_every: 10,
            adversarial: Some(AdversarialConfig::default()),
            adversarial_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    pub gate: Option<VarianceGate>,
    pub costs: CostModel,
    pub label_map: Option<Vec<usize>>,
}

impl AttackConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: AttackConfig = toml::from_str(text).map_err(|e| MexError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MexError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            MexError::Config(m) => MexError::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    /// Makes relative file paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.victim {
            VictimSpec::Checkpoint { path } => fix(path),
            VictimSpec::Trained { data: DataSource::Csv { path, .. }, .. } => fix(path),
            _ => {}
        }
        if let DataSource::Csv { path, .. } = &mut self.data.source {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MexError::Config(m.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(MexError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.budget.batch_size == 0 || self.trainer.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.data.split > 0.0 && self.data.split < 1.0) {
            return bad("data.split must lie in (0,1)");
        }
        self.policy.validate()?;
        self.evaluation.policy.validate()?;
        self.trainer.optimizer.resolve(self.trainer.task)?;
        mexkit_core::nn::Architecture::parse(&self.trainer.architecture)?;
        if let Some(mm) = &self.trainer.mixmatch {
            mm.validate()?;
        }
        match self.strategy.name {
            StrategyName::Mixed(r) => {
                r.split(self.budget.batch_size)?;
            }
            StrategyName::AdversarialPgd | StrategyName::AdversarialCw => {
                self.strategy.adversarial_config().validate()?;
            }
            _ => {}
        }
        if let StrategyName::Mixed(_) = self.strategy.name {
            self.strategy.adversarial_config().validate()?;
        }
        if let Some(adv) = &self.evaluation.adversarial {
            adv.validate()?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("configs serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let mm = if self.trainer.mixmatch.is_some() { "+mixmatch" } else { "" };
            format!("{}{mm}", self.strategy.name)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
seeds = [0, 1]

[victim]
kind = "trained"
architecture = "cnn-4"
data = { kind = "glyphs", samples = 200 }

[data.source]
kind = "glyphs"
samples = 300
seed = 5

[budget]
batches = 4
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = AttackConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.budget.batch_size, 64);
        assert_eq!(c.trainer.epochs, 200);
        assert_eq!(c.strategy.name, StrategyName::Basic);
        assert_eq!(c.policy, ResponsePolicy::Full);
        assert_eq!(c.data.split, 0.8);
    }

    #[test]
    fn unknown_keys_fail_closed() {
        let text = format!("{MINIMAL}\n[trainer]\nepochz = 3\n");
        assert!(matches!(AttackConfig::from_toml(&text), Err(MexError::Config(_))));
    }

    #[test]
    fn wrong_schema_version() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(AttackConfig::from_toml(&text).is_err());
    }

    #[test]
    fn strategies_by_name() {
        for s in ["basic", "active_kcenter", "adversarial_pgd", "adversarial_cw", "mixed(3:1)"] {
            assert_eq!(s.parse::<StrategyName>().unwrap().to_string(), s);
        }
        assert!("greedy".parse::<StrategyName>().is_err());
        let text = MINIMAL.replace("[budget]", "[strategy]\nname = \"mixed(1:5)\"\n\n[budget]");
        assert!(AttackConfig::from_toml(&text).is_err());
    }

    #[test]
    fn full_budget_and_roundtrip() {
        let text = MINIMAL.replace("batches = 4", "batches = \"full\"");
        let c = AttackConfig::from_toml(&text).unwrap();
        assert_eq!(c.budget.batches, Batches::Full);
        assert_eq!(c.budget.queries(240), 240);
        let again = AttackConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.fingerprint(), c.fingerprint());
    }

    #[test]
    fn optimizer_overrides() {
        let spec = OptimizerSpec { name: OptimizerKind::Lion, learning_rate: Some(1e-3), betas: None, weight_decay: None };
        let cfg = spec.resolve(Task::Vision).unwrap();
        assert_eq!((cfg.learning_rate, cfg.betas), (1e-3, (0.9, 0.99)));
    }
}
