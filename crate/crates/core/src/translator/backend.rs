//! Where translation answers come from: the rule oracle or an
//! OpenAI-compatible chat-completion endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::mock::mock_translate;
use super::prompt::{render_answers, TranslatorPrompt};
use crate::error::{Error, Result};

pub trait TranslatorBackend: Send + Sync {
    /// Stable identifier, part of the cache key.
    fn identity(&self) -> String;

    /// One completion for the prompt. `Err(Error::Backend)` is a transport
    /// failure and may be retried.
    fn complete(&self, prompt: &TranslatorPrompt) -> Result<String>;

    fn max_retries(&self) -> u32 {
        0
    }
}

/// Answers with the rule table applied to the prompt's input description.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockOracle;

impl TranslatorBackend for MockOracle {
    fn identity(&self) -> String {
        "mock".to_string()
    }

    fn complete(&self, prompt: &TranslatorPrompt) -> Result<String> {
        Ok(render_answers(&mock_translate(&prompt.input_description)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env_var: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub temperature: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            model_name: "gpt-4".to_string(),
            api_key_env_var: "OPENAI_API_KEY".to_string(),
            timeout_ms: 30_000,
            max_retries: 2,
            temperature: 0.0,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout_ms must be positive".into()));
        }
        if self.base_url.trim().is_empty() || self.model_name.trim().is_empty() {
            return Err(Error::Config("base_url and model_name are required".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

/// Blocking client for `POST <base_url>/chat/completions`.
///
/// Must not be driven from inside an async runtime thread.
#[derive(Debug, Clone)]
pub struct ChatCompletionBackend {
    config: BackendConfig,
    api_key: String,
}

impl ChatCompletionBackend {
    /// Fails fast when the API key variable is unset.
    pub fn new(config: BackendConfig) -> Result<Self> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env_var).map_err(|_| {
            Error::Backend(format!(
                "environment variable {} is not set",
                config.api_key_env_var
            ))
        })?;
        Ok(Self { config, api_key })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl TranslatorBackend for ChatCompletionBackend {
    fn identity(&self) -> String {
        format!("llm:{}@{}", self.config.model_name, self.config.base_url)
    }

    fn max_retries(&self) -> u32 {
        self.config.max_retries
    }

    fn complete(&self, prompt: &TranslatorPrompt) -> Result<String> {
        let rendered = prompt.render();
        let body = ChatRequest {
            model: &self.config.model_name,
            messages: [ChatMessage {
                role: "user",
                content: &rendered,
            }],
            temperature: self.config.temperature,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(self.config.timeout_ms))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        let resp = client
            .post(self.endpoint())
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| Error::Backend(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Error::Backend(format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| Error::Backend(format!("malformed completion: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::Backend("completion has no content".into()))?;
        log::info!("llm response ({}): {content:?}", self.config.model_name);
        Ok(content)
    }
}
