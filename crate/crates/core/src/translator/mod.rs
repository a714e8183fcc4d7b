//! Natural-language context descriptions to property levels.
//!
//! A [`Translator`] renders the prompt, asks its backend, parses the strict
//! answer grammar and caches the result keyed by the normalized description
//! and the backend identity.

mod backend;
mod mock;
mod parse;
mod prompt;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use backend::{BackendConfig, ChatCompletionBackend, MockOracle, TranslatorBackend};
pub use mock::mock_translate;
pub use parse::parse_response;
pub use prompt::{build_prompt, default_icl_examples, render_answers, IclExample, TranslatorPrompt};

use crate::embedding::{embed, ContextEmbedding};
use crate::error::{Error, Result};
use crate::terrain::PropertyLevels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationResult {
    pub levels: PropertyLevels,
    pub raw_response: String,
    pub backend: String,
    pub latency_ms: u64,
    pub cached: bool,
}

impl TranslationResult {
    pub fn embedding(&self) -> ContextEmbedding {
        embed(&self.levels)
    }
}

/// Lowercased, trimmed, whitespace-collapsed.
pub fn normalize_description(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Description → levels map, optionally persisted as a JSON object.
///
/// Concurrent writers on the same key are last-writer-wins; the values are
/// deterministic so the race is benign.
#[derive(Debug, Default)]
pub struct TranslationCache {
    path: Option<PathBuf>,
    entries: Mutex<BTreeMap<String, PropertyLevels>>,
}

impl TranslationCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists; writes go back to it.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let entries = if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            if text.trim().is_empty() {
                BTreeMap::new()
            } else {
                serde_json::from_str(&text)?
            }
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            path: Some(path),
            entries: Mutex::new(entries),
        })
    }

    pub fn key(description: &str, backend: &str) -> String {
        let mut h = Sha256::new();
        h.update(backend.as_bytes());
        h.update(b"\n");
        h.update(normalize_description(description).as_bytes());
        hex::encode(h.finalize())
    }

    pub fn get(&self, key: &str) -> Option<PropertyLevels> {
        self.entries.lock().unwrap().get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, key: String, levels: PropertyLevels) -> Result<()> {
        let mut entries = self.entries.lock().unwrap();
        entries.insert(key, levels);
        if let Some(path) = &self.path {
            write_atomic(path, &serde_json::to_string_pretty(&*entries)?)?;
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub struct Translator {
    backend: Box<dyn TranslatorBackend>,
    icl_examples: Vec<IclExample>,
    cache: TranslationCache,
}

impl Translator {
    pub fn new(backend: Box<dyn TranslatorBackend>) -> Self {
        Self {
            backend,
            icl_examples: default_icl_examples(),
            cache: TranslationCache::in_memory(),
        }
    }

    pub fn mock() -> Self {
        Self::new(Box::new(MockOracle))
    }

    pub fn with_cache(mut self, cache: TranslationCache) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_icl_examples(mut self, examples: Vec<IclExample>) -> Self {
        self.icl_examples = examples;
        self
    }

    pub fn backend_identity(&self) -> String {
        self.backend.identity()
    }

    pub fn cache(&self) -> &TranslationCache {
        &self.cache
    }

    pub fn translate(&self, description: &str) -> Result<TranslationResult> {
        let prompt = build_prompt(description, &self.icl_examples)?;
        let identity = self.backend.identity();
        let key = TranslationCache::key(description, &identity);
        if let Some(levels) = self.cache.get(&key) {
            return Ok(TranslationResult {
                levels,
                raw_response: render_answers(&levels),
                backend: identity,
                latency_ms: 0,
                cached: true,
            });
        }

        let attempts = self.backend.max_retries() + 1;
        let start = Instant::now();
        let mut last_err = None;
        for attempt in 1..=attempts {
            match self.backend.complete(&prompt) {
                Ok(raw) => match parse_response(&raw) {
                    Ok(levels) => {
                        self.cache.insert(key, levels)?;
                        return Ok(TranslationResult {
                            levels,
                            raw_response: raw,
                            backend: identity,
                            latency_ms: start.elapsed().as_millis() as u64,
                            cached: false,
                        });
                    }
                    Err(e) => {
                        log::warn!("attempt {attempt}/{attempts}: unparseable reply {raw:?}");
                        last_err = Some(e);
                    }
                },
                Err(e @ Error::Backend(_)) => {
                    log::warn!("attempt {attempt}/{attempts}: {e}");
                    last_err = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        match last_err {
            Some(Error::Backend(msg)) => Err(Error::Backend(format!(
                "{msg} (after {attempts} attempt(s))"
            ))),
            Some(e) => Err(Error::Translation {
                attempts,
                last: e.to_string(),
            }),
            None => unreachable!("at least one attempt is made"),
        }
    }
}
