//! Shared run configuration, read from TOML. Every key is optional:
//!
//! ```toml
//! seed = 2024
//! max_in_flight = 8
//!
//! [endpoint]
//! base_url = "http://localhost:8000/v1"
//! api_key_env = "SYNTHTASK_API_KEY"
//! timeout_secs = 120
//! # model = "my-generator"
//!
//! [sampling]
//! top_p = 0.95
//! temperature = 0.5
//! max_tokens = 256
//!
//! [retry]
//! max_retries = 3
//! base_delay = 500      # milliseconds
//! max_delay = 8000
//!
//! [paths]
//! registry = "assets/registry/registry.jsonl"
//! ```
//!
//! Command-line flags take precedence over the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{CompletionClient, RetryPolicy, SamplingParams};
use crate::ctga::DEFAULT_SEED;

pub const DEFAULT_API_KEY_ENV: &str = "SYNTHTASK_API_KEY";
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: Option<String>,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub model: Option<String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_owned(),
            timeout_secs: 120,
            model: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub registry: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub docs: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub max_in_flight: usize,
    pub endpoint: EndpointConfig,
    pub sampling: SamplingParams,
    pub retry: RetryPolicy,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            endpoint: EndpointConfig::default(),
            sampling: SamplingParams::generation(),
            retry: RetryPolicy::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_in_flight == 0 {
            return Err(ConfigError::Invalid("max_in_flight must be at least 1".into()));
        }
        self.sampling.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Client for the configured endpoint, or `override_url` when given.
    pub fn client(&self, override_url: Option<&str>) -> Result<CompletionClient, ConfigError> {
        let url = override_url
            .map(str::to_owned)
            .or_else(|| self.endpoint.base_url.clone())
            .ok_or_else(|| ConfigError::Invalid("no endpoint: pass --endpoint or set endpoint.base_url".into()))?;
        let api_key = std::env::var(&self.endpoint.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(CompletionClient::http(&url, api_key, Duration::from_secs(self.endpoint.timeout_secs), self.max_in_flight)
            .with_retry(self.retry.clone())
            .with_model(self.endpoint.model.clone()))
    }
}
