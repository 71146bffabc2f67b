//! Server configuration file (TOML, or JSON when the extension is `.json`).
//!
//! ```toml
//! default_locale = "ko"
//! # catalog, prompts_dir, fewshot_dir, safety_lexicon default to the bundled data
//! max_session_minutes = 30
//! allowed_origin = "http://localhost:5173"
//!
//! [gateway]
//! secrets_file = "secrets.env"
//! max_concurrent_requests = 8
//! # scenario = "scenario.json"   # answer from a scripted backend instead
//!
//! [gateway.generator]
//! model_id = "gpt-4-0613"
//!
//! [gateway.analyzer]
//! model_id = "gpt-3.5-turbo-0613"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use chacha_core::analyzers::{FewShotStore, SafetyLexicon};
use chacha_core::gateway::{resolve_api_key, Backend, HttpBackend};
use chacha_core::prompt::PromptAssets;
use chacha_core::script::{SCRIPTED_ANALYZER, SCRIPTED_GENERATOR};
use chacha_core::{
    Analyzers, BackendConfig, Clock, Composer, EmotionCatalog, Engine, Gateway, IdSource,
    ScriptedBackend, SystemClock, Tier, UuidIds,
};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_locale")]
    pub default_locale: String,
    pub catalog: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub fewshot_dir: Option<PathBuf>,
    pub safety_lexicon: Option<PathBuf>,
    /// Ends sessions older than this on their next message. Off when unset.
    pub max_session_minutes: Option<u64>,
    /// Origin allowed to call the API from a browser (CORS).
    pub allowed_origin: Option<String>,
    /// Directory of built web-client assets served at `/`.
    pub static_dir: Option<PathBuf>,
    #[serde(default)]
    pub gateway: GatewayConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    /// Scripted-backend scenario; when set no live backend is contacted.
    pub scenario: Option<PathBuf>,
    /// `NAME=value` lines consulted after the environment for API keys.
    pub secrets_file: Option<PathBuf>,
    pub max_concurrent_requests: Option<usize>,
    #[serde(default)]
    pub generator: TierOverrides,
    #[serde(default)]
    pub analyzer: TierOverrides,
}

/// Per-tier settings; anything unset keeps the tier default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierOverrides {
    pub endpoint: Option<String>,
    pub model_id: Option<String>,
    pub api_key_ref: Option<String>,
    pub temperature: Option<f32>,
    pub max_output_tokens: Option<u32>,
    pub context_limit_tokens: Option<u32>,
    pub request_timeout_ms: Option<u64>,
    pub max_retries: Option<u32>,
    pub retry_base_delay_ms: Option<u64>,
}

fn default_locale() -> String {
    "ko".into()
}

impl Default for Config {
    fn default() -> Self {
        Config {
            default_locale: default_locale(),
            catalog: None,
            prompts_dir: None,
            fewshot_dir: None,
            safety_lexicon: None,
            max_session_minutes: None,
            allowed_origin: None,
            static_dir: None,
            gateway: GatewayConfig::default(),
        }
    }
}

impl TierOverrides {
    fn apply(&self, tier: Tier, scripted: bool) -> anyhow::Result<BackendConfig> {
        let fallback = if scripted {
            match tier {
                Tier::Generator => SCRIPTED_GENERATOR,
                Tier::Analyzer => SCRIPTED_ANALYZER,
            }
        } else {
            ""
        };
        let mut c = BackendConfig::for_tier(tier, self.model_id.clone().unwrap_or(fallback.into()));
        if let Some(v) = &self.endpoint {
            c.endpoint = v.clone();
        }
        if let Some(v) = &self.api_key_ref {
            c.api_key_ref = v.clone();
        }
        if let Some(v) = self.temperature {
            c.temperature = v;
        }
        if let Some(v) = self.max_output_tokens {
            c.max_output_tokens = v;
        }
        if let Some(v) = self.context_limit_tokens {
            c.context_limit_tokens = v;
        }
        if let Some(v) = self.request_timeout_ms {
            c.request_timeout_ms = v;
        }
        if let Some(v) = self.max_retries {
            c.max_retries = v;
        }
        if let Some(v) = self.retry_base_delay_ms {
            c.retry_base_delay_ms = v;
        }
        if !scripted {
            c.apply_env();
        }
        if c.model_id.is_empty() {
            bail!("no model_id for the {tier} tier: set gateway.{tier}.model_id or the environment variable");
        }
        c.validate()?;
        Ok(c)
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.catalog,
            &mut self.prompts_dir,
            &mut self.fewshot_dir,
            &mut self.safety_lexicon,
            &mut self.static_dir,
            &mut self.gateway.scenario,
            &mut self.gateway.secrets_file,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Builds the engine with the wall clock and random session ids.
    pub fn engine(&self) -> anyhow::Result<Engine> {
        self.engine_with(Arc::new(SystemClock), Arc::new(UuidIds))
    }

    /// Loads every asset and checks it up front, so a bad deployment fails
    /// at startup rather than on some later turn.
    pub fn engine_with(&self, clock: Arc<dyn Clock>, ids: Arc<dyn IdSource>) -> anyhow::Result<Engine> {
        let catalog = match &self.catalog {
            Some(p) => EmotionCatalog::from_path(p)?,
            None => EmotionCatalog::bundled(),
        };
        let assets = match &self.prompts_dir {
            Some(p) => PromptAssets::from_dir(p)?,
            None => PromptAssets::bundled(),
        };
        assets.require(catalog.locales())?;
        if assets.locale(&self.default_locale).is_none() {
            bail!("no prompt assets for default locale {:?}", self.default_locale);
        }
        let few_shots = match &self.fewshot_dir {
            Some(p) => FewShotStore::from_dir(p)?,
            None => FewShotStore::bundled(),
        };
        let lexicon = match &self.safety_lexicon {
            Some(p) => SafetyLexicon::from_path(p)
                .with_context(|| format!("reading safety lexicon {}", p.display()))?,
            None => SafetyLexicon::bundled(),
        };

        let gw = &self.gateway;
        let scripted = gw.scenario.is_some();
        let g = gw.generator.apply(Tier::Generator, scripted)?;
        let a = gw.analyzer.apply(Tier::Analyzer, scripted)?;
        let gateway = match &gw.scenario {
            Some(path) => {
                let backend: Arc<dyn Backend> = Arc::new(ScriptedBackend::from_path(path)?);
                Gateway::shared(g.clone(), a, backend)?
            }
            None => {
                let live = |c: &BackendConfig| -> anyhow::Result<Arc<dyn Backend>> {
                    let key = resolve_api_key(&c.api_key_ref, gw.secrets_file.as_deref());
                    if key.is_none() {
                        tracing::warn!(tier = %c.tier, key = %c.api_key_ref, "no API key found");
                    }
                    Ok(Arc::new(HttpBackend::new(&c.endpoint, key)?))
                };
                Gateway::new((g.clone(), live(&g)?), (a.clone(), live(&a)?))?
            }
        };
        let gateway = match gw.max_concurrent_requests {
            Some(n) => gateway.with_concurrency_limit(n),
            None => gateway,
        };
        let gateway = Arc::new(gateway);
        let composer = Composer::for_generator(assets, catalog, &g);
        let analyzers = Analyzers::new(gateway.clone(), few_shots, lexicon);
        Ok(Engine::new(gateway, Arc::new(analyzers), Arc::new(composer), clock, ids)
            .with_default_locale(self.default_locale.clone()))
    }
}
