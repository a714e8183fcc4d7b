//! The JSON run configuration. Every section has defaults so a config file
//! only needs the fields it changes; command-line flags override the file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ctxloco_core::ars::ArsConfig;
use ctxloco_core::embedding::{BlockOrder, Method};
use ctxloco_core::translator::{BackendConfig, ChatCompletionBackend, TranslationCache, Translator};
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const RUN_CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub ars: ArsConfig,
    pub method: Method,
    pub block_order: BlockOrder,
    pub translator: TranslatorChoice,
    pub eval: EvalSection,
    pub paths: Paths,
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: RUN_CONFIG_FORMAT_VERSION,
            ars: ArsConfig::default(),
            method: Method::Embedding,
            block_order: BlockOrder::default(),
            translator: TranslatorChoice::Mock,
            eval: EvalSection::default(),
            paths: Paths::default(),
            serve: ServeSection::default(),
        }
    }
}

/// Exactly one backend: the rule oracle or an OpenAI-compatible endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum TranslatorChoice {
    Mock,
    Llm(BackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_episodes: usize,
    pub seed: u64,
    /// `all`, `low`, `high` or a comma list of case letters.
    pub cases: String,
    /// Defaults to the episode cap the policies were trained with.
    pub episode_cap: Option<usize>,
    pub methods: Vec<Method>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_episodes: 16,
            seed: 1000,
            cases: "all".into(),
            episode_cap: None,
            methods: Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub policy_out: Option<PathBuf>,
    pub curve_out: Option<PathBuf>,
    /// Directory holding `<method>.json` policy files.
    pub policies_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub cache_file: Option<PathBuf>,
    pub journal_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub bind: String,
    pub port: u16,
    pub steps_per_second: f64,
    pub decimation: usize,
    pub max_sessions: usize,
    pub turbo: bool,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            steps_per_second: 50.0,
            decimation: 5,
            max_sessions: 16,
            turbo: false,
        }
    }
}

impl RunConfig {
    /// Defaults when `path` is `None`; a missing or malformed file is a
    /// usage error.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(Failure::Usage)?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))
            .map_err(Failure::Usage)?;
        if config.format_version != RUN_CONFIG_FORMAT_VERSION {
            return Err(Failure::Usage(anyhow::anyhow!(
                "config format_version {} is not supported (expected {RUN_CONFIG_FORMAT_VERSION})",
                config.format_version
            )));
        }
        Ok(config)
    }
}

/// Builds the configured translator; an LLM backend without credentials
/// fails here, before any rollout.
pub fn build_translator(choice: &TranslatorChoice, cache_file: Option<&Path>) -> Result<Translator, Failure> {
    let translator = match choice {
        TranslatorChoice::Mock => Translator::mock(),
        TranslatorChoice::Llm(cfg) => {
            let backend = ChatCompletionBackend::new(cfg.clone()).map_err(Failure::from_core)?;
            Translator::new(Box::new(backend))
        }
    };
    match cache_file {
        Some(path) => {
            let cache = TranslationCache::open(path).map_err(Failure::from_core)?;
            Ok(translator.with_cache(cache))
        }
        None => Ok(translator),
    }
}

pub fn parse_translator_flag(name: &str, current: &TranslatorChoice) -> anyhow::Result<TranslatorChoice> {
    match name {
        "mock" => Ok(TranslatorChoice::Mock),
        "llm" => Ok(match current {
            TranslatorChoice::Llm(cfg) => TranslatorChoice::Llm(cfg.clone()),
            TranslatorChoice::Mock => TranslatorChoice::Llm(BackendConfig::default()),
        }),
        other => bail!("unknown translator backend '{other}' (expected mock or llm)"),
    }
}
