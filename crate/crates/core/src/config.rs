//! TOML configuration: one `[profiles.<name>]` table per model, plus an
//! optional `[workflow]` table for time-savings accounting.
//!
//! ```toml
//! [profiles.deepseek-r1]
//! model_name = "deepseek-reasoner"
//! base_url = "https://api.deepseek.com/v1"
//! api_key_env = "DEEPSEEK_API_KEY"
//! price_per_1k_prompt_tokens = 0.00206
//! price_per_1k_completion_tokens = 0.00206
//! currency_label = "CNY"
//! ```
//!
//! API keys are never read from the file, only from the named variable.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::PromptLanguage;

pub const CONFIG_ENV: &str = "MAIN_ANNOTATE_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("profile {name:?}: {message}")]
    Invalid { name: String, message: String },
    #[error("no model profile named {0:?}")]
    UnknownProfile(String),
}

fn default_temperature() -> f64 {
    0.0
}
fn default_max_output_tokens() -> u32 {
    4096
}
fn default_timeout() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_in_flight() -> usize {
    4
}
fn default_currency() -> String {
    "CNY".to_string()
}
fn default_retry_base_ms() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_name: String,
    pub base_url: String,
    /// Name of the environment variable holding the key. Empty for
    /// endpoints that need no key, such as a local server.
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout", rename = "request_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub price_per_1k_prompt_tokens: f64,
    #[serde(default)]
    pub price_per_1k_completion_tokens: f64,
    #[serde(default = "default_currency")]
    pub currency_label: String,
    /// First retry delay; later delays double.
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_delay_ms: u64,
    #[serde(default)]
    pub prompt_language: PromptLanguage,
}

impl ModelConfig {
    pub fn new(model_name: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            base_url: base_url.into(),
            api_key_env: String::new(),
            temperature: default_temperature(),
            max_output_tokens: default_max_output_tokens(),
            request_timeout_secs: default_timeout(),
            max_retries: default_max_retries(),
            max_in_flight: default_in_flight(),
            price_per_1k_prompt_tokens: 0.0,
            price_per_1k_completion_tokens: 0.0,
            currency_label: default_currency(),
            retry_base_delay_ms: default_retry_base_ms(),
            prompt_language: PromptLanguage::default(),
        }
    }

    pub fn validate(&self, name: &str) -> Result<(), ConfigError> {
        let bad = |message: &str| {
            Err(ConfigError::Invalid {
                name: name.to_string(),
                message: message.to_string(),
            })
        };
        if self.model_name.trim().is_empty() {
            return bad("model_name is empty");
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad("temperature must be >= 0");
        }
        if self.max_in_flight < 1 {
            return bad("max_in_flight must be >= 1");
        }
        let prices = [
            self.price_per_1k_prompt_tokens,
            self.price_per_1k_completion_tokens,
        ];
        if prices.iter().any(|p| p.is_nan() || *p < 0.0) {
            return bad("prices must be >= 0");
        }
        if !self.base_url.starts_with("http://") && !self.base_url.starts_with("https://") {
            return bad("base_url must be an http(s) URL");
        }
        Ok(())
    }
}

fn default_baseline_minutes() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowConfig {
    /// Manual annotation effort per story, in minutes.
    #[serde(default = "default_baseline_minutes")]
    pub baseline_minutes_per_story: f64,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            baseline_minutes_per_story: default_baseline_minutes(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub profiles: BTreeMap<String, ModelConfig>,
    #[serde(default)]
    pub workflow: WorkflowConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (name, profile) in &cfg.profiles {
            profile.validate(name)?;
        }
        let baseline = cfg.workflow.baseline_minutes_per_story;
        if baseline.is_nan() || baseline <= 0.0 {
            return Err(ConfigError::Parse(
                "workflow.baseline_minutes_per_story must be > 0".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn profile(&self, name: &str) -> Result<&ModelConfig, ConfigError> {
        self.profiles
            .get(name)
            .ok_or_else(|| ConfigError::UnknownProfile(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_defaults() {
        let cfg = Config::from_toml(
            r#"
            [profiles.r1]
            model_name = "deepseek-reasoner"
            base_url = "https://api.example.com/v1"
            api_key_env = "KEY"
            "#,
        )
        .unwrap();
        let p = cfg.profile("r1").unwrap();
        assert_eq!(p.temperature, 0.0);
        assert_eq!(p.max_output_tokens, 4096);
        assert_eq!(p.max_in_flight, 4);
        assert_eq!(cfg.workflow.baseline_minutes_per_story, 10.0);
        assert!(matches!(
            cfg.profile("v3"),
            Err(ConfigError::UnknownProfile(_))
        ));
    }

    #[test]
    fn invariants_are_checked() {
        let bad = r#"
            [profiles.x]
            model_name = "m"
            base_url = "http://localhost:1"
            max_in_flight = 0
        "#;
        assert!(matches!(
            Config::from_toml(bad),
            Err(ConfigError::Invalid { .. })
        ));
        let bad = r#"
            [profiles.x]
            model_name = "m"
            base_url = "http://localhost:1"
            price_per_1k_prompt_tokens = -1.0
        "#;
        assert!(Config::from_toml(bad).is_err());
        let key_in_file = r#"
            [profiles.x]
            model_name = "m"
            base_url = "http://localhost:1"
            api_key = "sk-123"
        "#;
        assert!(matches!(
            Config::from_toml(key_in_file),
            Err(ConfigError::Parse(_))
        ));
    }
}
