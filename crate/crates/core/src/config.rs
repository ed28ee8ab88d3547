//! Application configuration loaded from TOML.
//!
//! Only the provider credential may reference the environment, written as
//! `${VAR}`. The credential is never part of the config hash.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backward::{PerturbationPlan, RewardJitter};
use crate::corpus::DEFAULT_NOVELTY_THRESHOLD;
use crate::llm::Decoding;
use crate::retrieval::DEFAULT_FEW_SHOT;
use crate::scenario::Pairing;
use crate::Tolerance;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config value out of range: {0}")]
    Range(String),
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("environment interpolation is only allowed in provider.credential")]
    InterpolationOutsideCredential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Usually `${SOME_ENV_VAR}`.
    #[serde(skip_serializing)]
    pub credential: Option<String>,
    pub rpm_limit: u32,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4o".into(),
            credential: Some("${OPENAI_API_KEY}".into()),
            rpm_limit: 60,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineDefaults {
    /// Number of personas, K.
    pub personas: usize,
    /// Repeats per (seed, scenario), R.
    pub repeats: usize,
    /// Reflection cap, P.
    pub max_reflections: usize,
    pub novelty_threshold: f64,
    pub workers: usize,
    pub few_shot: usize,
    pub pairing: Pairing,
    /// System prompt for the validity judge.
    pub validity_prompt: String,
}

impl Default for PipelineDefaults {
    fn default() -> Self {
        Self {
            personas: 5,
            repeats: 1,
            max_reflections: 6,
            novelty_threshold: DEFAULT_NOVELTY_THRESHOLD,
            workers: 8,
            few_shot: DEFAULT_FEW_SHOT,
            pairing: Pairing::Cross,
            validity_prompt: crate::prompts::VALIDITY_SYSTEM.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    pub interpreter: String,
    pub timeout_secs: f64,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self { interpreter: "python3".into(), timeout_secs: 10.0 }
    }
}

/// Backward-generation perturbation. Setting a magnitude to zero, or
/// `enabled = false`, leaves that part of the problem data untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub enabled: bool,
    pub reward_scale: (f64, f64),
    pub reward_shift: f64,
    /// Dirichlet concentration for transition rows; 0 disables.
    pub concentration: f64,
    pub horizon_fraction: f64,
    pub gamma_jitter: f64,
    pub initial_state: bool,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self::from_plan(&PerturbationPlan::default())
    }
}

impl PerturbationConfig {
    fn from_plan(plan: &PerturbationPlan) -> Self {
        let jitter = plan.rewards.unwrap_or(RewardJitter { scale: (1.0, 1.0), shift: 0.0 });
        Self {
            enabled: true,
            reward_scale: jitter.scale,
            reward_shift: jitter.shift,
            concentration: plan.transitions.unwrap_or(0.0),
            horizon_fraction: plan.horizon.unwrap_or(0.0),
            gamma_jitter: plan.gamma.unwrap_or(0.0),
            initial_state: plan.initial_state,
        }
    }

    pub fn plan(&self) -> PerturbationPlan {
        if !self.enabled {
            return PerturbationPlan::identity();
        }
        let positive = |x: f64| (x > 0.0).then_some(x);
        let rewards = (self.reward_scale != (1.0, 1.0) || self.reward_shift > 0.0)
            .then_some(RewardJitter { scale: self.reward_scale, shift: self.reward_shift });
        PerturbationPlan {
            rewards,
            transitions: positive(self.concentration),
            horizon: positive(self.horizon_fraction),
            gamma: positive(self.gamma_jitter),
            initial_state: self.initial_state,
            seed: 0,
        }
    }

    fn check(&self) -> Result<(), String> {
        let (lo, hi) = self.reward_scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(format!("perturbation.reward_scale must satisfy 0 < lo <= hi, got ({lo}, {hi})"));
        }
        for (name, v) in [
            ("reward_shift", self.reward_shift),
            ("concentration", self.concentration),
            ("horizon_fraction", self.horizon_fraction),
            ("gamma_jitter", self.gamma_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("perturbation.{name} must be a nonnegative number, got {v}"));
            }
        }
        if self.horizon_fraction >= 1.0 {
            return Err("perturbation.horizon_fraction must be below 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub rng_seed: u64,
    pub cache_dir: Option<PathBuf>,
    pub mock_dir: Option<PathBuf>,
    pub provider: ProviderConfig,
    pub decoding: Decoding,
    pub pipeline: PipelineDefaults,
    pub tolerance: Tolerance,
    pub execution: ExecutionConfig,
    pub perturbation: PerturbationConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            cache_dir: None,
            mock_dir: None,
            provider: ProviderConfig::default(),
            decoding: Decoding::default(),
            pipeline: PipelineDefaults::default(),
            tolerance: Tolerance::default(),
            execution: ExecutionConfig::default(),
            perturbation: PerturbationConfig::default(),
        }
    }
}

fn has_interpolation(value: &toml::Value) -> bool {
    match value {
        toml::Value::String(s) => s.contains("${"),
        toml::Value::Array(a) => a.iter().any(has_interpolation),
        toml::Value::Table(t) => t.values().any(has_interpolation),
        _ => false,
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut raw: toml::Table = text.parse()?;
        let credential = raw
            .get_mut("provider")
            .and_then(|p| p.as_table_mut())
            .and_then(|p| p.remove("credential"));
        if raw.values().any(has_interpolation) {
            return Err(ConfigError::InterpolationOutsideCredential);
        }
        let mut cfg: AppConfig = toml::Value::Table(raw).try_into()?;
        cfg.provider.credential = match credential {
            Some(toml::Value::String(s)) => Some(s),
            Some(_) => return Err(ConfigError::Range("provider.credential must be a string".into())),
            None => ProviderConfig::default().credential,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let p = &self.pipeline;
        let range = |ok: bool, msg: String| if ok { Ok(()) } else { Err(ConfigError::Range(msg)) };
        range(p.personas >= 2, format!("pipeline.personas must be >= 2, got {}", p.personas))?;
        range(p.repeats >= 1, "pipeline.repeats must be >= 1".into())?;
        range(p.max_reflections >= 1, "pipeline.max_reflections must be >= 1".into())?;
        range(
            p.novelty_threshold > 0.0 && p.novelty_threshold < 1.0,
            format!("pipeline.novelty_threshold must lie in (0,1), got {}", p.novelty_threshold),
        )?;
        range(p.workers >= 1, "pipeline.workers must be >= 1".into())?;
        range(p.few_shot >= 1, "pipeline.few_shot must be >= 1".into())?;
        self.decoding.check().map_err(ConfigError::Range)?;
        self.perturbation.check().map_err(ConfigError::Range)?;
        range(
            self.tolerance.abs >= 0.0 && self.tolerance.rel >= 0.0,
            "tolerances must be nonnegative".into(),
        )?;
        range(
            self.execution.timeout_secs > 0.0 && self.execution.timeout_secs.is_finite(),
            "execution.timeout_secs must be positive".into(),
        )
    }

    /// Resolves the credential, expanding a `${VAR}` reference.
    pub fn credential(&self) -> Result<Option<String>, ConfigError> {
        let Some(raw) = &self.provider.credential else { return Ok(None) };
        match raw.strip_prefix("${").and_then(|r| r.strip_suffix('}')) {
            Some(var) => std::env::var(var).map(Some).map_err(|_| ConfigError::MissingEnv(var.to_string())),
            None => Ok(Some(raw.clone())),
        }
    }

    /// SHA-256 over the canonical JSON form; credentials are skipped during
    /// serialisation and so never affect the hash.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
