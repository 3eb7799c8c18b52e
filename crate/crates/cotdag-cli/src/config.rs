//! Flat key-value configuration file with flag overrides.
//!
//! Every flag has a config-file counterpart under the same name; flags win.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use cotdag::backend::BackendConfig;
use cotdag::construct::{OnExhausted, OracleConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Heuristic,
    Llm,
}

/// Raw file contents; all keys optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<BackendKind>,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_concurrent_requests: Option<usize>,
    pub http_max_retries: Option<u32>,
    pub retry_backoff_ms: Option<u64>,
    pub price_per_1k_input_tokens: Option<f64>,
    pub price_per_1k_output_tokens: Option<f64>,
    pub oracle_max_retries: Option<u32>,
    pub on_exhausted: Option<OnExhausted>,
    pub k: Option<usize>,
    pub m: Option<f64>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub jobs: Option<usize>,
    pub triggers: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub keywords: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
    }

    pub fn backend_config(&self) -> BackendConfig {
        let defaults = BackendConfig::default();
        BackendConfig {
            endpoint_url: self.endpoint_url.clone().unwrap_or(defaults.endpoint_url),
            model_name: self.model_name.clone().unwrap_or(defaults.model_name),
            api_key_env: self.api_key_env.clone().unwrap_or(defaults.api_key_env),
            timeout_secs: self.timeout_secs.unwrap_or(defaults.timeout_secs),
            max_concurrent_requests: self
                .max_concurrent_requests
                .unwrap_or(defaults.max_concurrent_requests),
            max_retries: self.http_max_retries.unwrap_or(defaults.max_retries),
            retry_backoff_ms: self.retry_backoff_ms.unwrap_or(defaults.retry_backoff_ms),
            price_per_1k_input_tokens: self
                .price_per_1k_input_tokens
                .unwrap_or(defaults.price_per_1k_input_tokens),
            price_per_1k_output_tokens: self
                .price_per_1k_output_tokens
                .unwrap_or(defaults.price_per_1k_output_tokens),
        }
    }

    pub fn oracle_config(&self) -> OracleConfig {
        let defaults = OracleConfig::default();
        OracleConfig {
            max_retries: self.oracle_max_retries.unwrap_or(defaults.max_retries),
            on_exhausted: self.on_exhausted.unwrap_or(defaults.on_exhausted),
        }
    }
}
