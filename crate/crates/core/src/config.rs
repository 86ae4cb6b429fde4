//! Run configuration shared by every subcommand.
//!
//! A seed is mandatory. Every other section has defaults, so a minimal
//! config file is `seed = 7`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::discrepancy::{IN_POLICY_ABOVE, NOT_IN_POLICY_BELOW};
use crate::labelers::{Hyperparams, L2_GRID};
use crate::pipeline::{PipelineConfig, SECOND};
use crate::sampler::{SamplerParams, SplitSizes, ALPHA};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("no seed given: set `seed` in the config or ATLAS_SEED")]
    MissingSeed,
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub catalog: Option<PathBuf>,
    pub policy_store: Option<PathBuf>,
    pub model_bundle: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Decision bands and significance level. These are fixed by the method and
/// recorded so every output states the values it was produced with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub not_in_policy_below: f64,
    pub in_policy_above: f64,
    pub alpha: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { not_in_policy_below: NOT_IN_POLICY_BELOW, in_policy_above: IN_POLICY_ABOVE, alpha: ALPHA }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrawlSettings {
    pub workers: usize,
    pub identities: usize,
    /// Requests per second per identity.
    pub rate: f64,
    pub burst: Option<u32>,
    pub max_passes: u32,
    pub request_timeout_ms: u64,
    /// SOCKS proxy endpoints for live crawling, one identity each.
    pub proxies: Vec<String>,
}

impl Default for CrawlSettings {
    fn default() -> Self {
        CrawlSettings {
            workers: 4,
            identities: 4,
            rate: 2.0,
            burst: None,
            max_passes: 3,
            request_timeout_ms: 30_000,
            proxies: Vec::new(),
        }
    }
}

impl CrawlSettings {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            workers: self.workers,
            max_passes: self.max_passes,
            request_timeout: self.request_timeout_ms * (SECOND / 1000),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSettings {
    pub hyperparams: Hyperparams,
    pub l2_grid: Vec<f64>,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings { hyperparams: Hyperparams::default(), l2_grid: L2_GRID.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub sampler: SamplerParams,
    #[serde(default)]
    pub sizes: SplitSizes,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub crawl: CrawlSettings,
    #[serde(default)]
    pub training: TrainingSettings,
}

impl RunConfig {
    /// Defaults for everything except the seed.
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            paths: Paths::default(),
            sampler: SamplerParams::default(),
            sizes: SplitSizes::default(),
            thresholds: Thresholds::default(),
            crawl: CrawlSettings::default(),
            training: TrainingSettings::default(),
        }
    }

    /// Parses TOML, or JSON when `json` is set. `fallback_seed` fills in a
    /// missing `seed`.
    pub fn parse(text: &str, json: bool, fallback_seed: Option<u64>) -> Result<Self, ConfigError> {
        let mut value: Value = if json {
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
        };
        let obj = value.as_object_mut().ok_or_else(|| ConfigError::Parse("top level must be a table".into()))?;
        if !obj.contains_key("seed") {
            let seed = fallback_seed.ok_or(ConfigError::MissingSeed)?;
            obj.insert("seed".into(), Value::from(seed));
        }
        let config: RunConfig = serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path, fallback_seed: Option<u64>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        RunConfig::parse(&text, json, fallback_seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.thresholds;
        if t != &Thresholds::default() {
            return Err(ConfigError::Invalid(format!(
                "thresholds are fixed at {NOT_IN_POLICY_BELOW}/{IN_POLICY_ABOVE} with alpha {ALPHA}"
            )));
        }
        if !(self.sampler.eps > 0.0) || self.sampler.min_samples == 0 || self.sampler.k == 0 {
            return Err(ConfigError::Invalid("sampler eps, min_samples and k must be positive".into()));
        }
        let c = &self.crawl;
        if c.workers == 0 || c.max_passes == 0 {
            return Err(ConfigError::Invalid("crawl workers and max_passes must be at least 1".into()));
        }
        if !(c.rate > 0.0) || !c.rate.is_finite() {
            return Err(ConfigError::Invalid("crawl rate must be positive".into()));
        }
        if self.training.l2_grid.is_empty() || self.training.l2_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(ConfigError::Invalid("l2_grid must be non-empty and non-negative".into()));
        }
        Ok(())
    }

    /// The config as embedded in output bundles.
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
