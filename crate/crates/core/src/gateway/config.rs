use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Tier;

pub const ENV_GENERATOR_MODEL: &str = "CHACHA_GENERATOR_MODEL";
pub const ENV_ANALYZER_MODEL: &str = "CHACHA_ANALYZER_MODEL";
pub const ENV_API_KEY: &str = "CHACHA_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub tier: Tier,
    pub endpoint: String,
    pub model_id: String,
    /// Name of the environment variable (or secrets-file key) holding the
    /// API key. Never the key itself.
    #[serde(default = "default_api_key_ref")]
    pub api_key_ref: String,
    pub temperature: f32,
    pub max_output_tokens: u32,
    pub context_limit_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    #[serde(default = "default_backoff_ms")]
    pub retry_base_delay_ms: u64,
}

fn default_api_key_ref() -> String {
    ENV_API_KEY.to_string()
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid {tier} backend config: {message}")]
pub struct ConfigError {
    pub tier: Tier,
    pub message: String,
}

impl BackendConfig {
    /// Defaults for a tier: the generator samples at 0.7 for varied
    /// persona content, the analyzer extracts at 0.0.
    pub fn for_tier(tier: Tier, model_id: impl Into<String>) -> Self {
        let (temperature, max_output_tokens) = match tier {
            Tier::Generator => (0.7, 512),
            Tier::Analyzer => (0.0, 768),
        };
        Self {
            tier,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_id: model_id.into(),
            api_key_ref: default_api_key_ref(),
            temperature,
            max_output_tokens,
            context_limit_tokens: 8192,
            request_timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            retry_base_delay_ms: default_backoff_ms(),
        }
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }

    /// Applies `CHACHA_GENERATOR_MODEL` / `CHACHA_ANALYZER_MODEL` if set.
    pub fn apply_env(&mut self) {
        let var = match self.tier {
            Tier::Generator => ENV_GENERATOR_MODEL,
            Tier::Analyzer => ENV_ANALYZER_MODEL,
        };
        if let Ok(model) = std::env::var(var) {
            if !model.trim().is_empty() {
                self.model_id = model.trim().to_string();
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |message: String| {
            Err(ConfigError {
                tier: self.tier,
                message,
            })
        };
        if self.model_id.trim().is_empty() {
            return err("model_id is empty".into());
        }
        if reqwest::Url::parse(&self.endpoint).is_err() {
            return err(format!("endpoint {:?} is not a URL", self.endpoint));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return err(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.max_output_tokens == 0 {
            return err("max_output_tokens must be positive".into());
        }
        if self.context_limit_tokens <= self.max_output_tokens {
            return err(format!(
                "context_limit_tokens {} must exceed max_output_tokens {}",
                self.context_limit_tokens, self.max_output_tokens
            ));
        }
        if self.request_timeout_ms == 0 {
            return err("request_timeout_ms must be positive".into());
        }
        Ok(())
    }

    /// Upper bound on wall time for one `complete` call, excluding backoff.
    pub fn worst_case_duration(&self) -> Duration {
        self.request_timeout() * (self.max_retries + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        BackendConfig::for_tier(Tier::Generator, "gpt-4-0613")
            .validate()
            .unwrap();
        let a = BackendConfig::for_tier(Tier::Analyzer, "gpt-3.5-turbo-0613");
        a.validate().unwrap();
        assert_eq!(a.temperature, 0.0);
    }

    #[test]
    fn context_must_exceed_output() {
        let mut c = BackendConfig::for_tier(Tier::Generator, "m");
        c.context_limit_tokens = c.max_output_tokens;
        assert!(c.validate().is_err());
    }

    #[test]
    fn temperature_range() {
        let mut c = BackendConfig::for_tier(Tier::Generator, "m");
        c.temperature = 2.5;
        assert!(c.validate().is_err());
    }
}
