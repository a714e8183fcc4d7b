use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ctxloco_core::embedding::Method;
use ctxloco_core::policy::LinearPolicy;
use ctxloco_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Listing entry for `GET /v1/policies`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyInfo {
    pub id: String,
    pub method: Method,
    pub input_dim: usize,
    pub embedding_dim: usize,
    pub hash: String,
}

/// Policies the service can start sessions with, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct PolicyRegistry {
    policies: BTreeMap<String, Arc<LinearPolicy>>,
}

impl PolicyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every `*.json` policy file in `dir`; the id is the file stem.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut registry = Self::new();
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            match LinearPolicy::load(&path) {
                Ok(p) => registry.insert(id, p),
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(registry)
    }

    pub fn insert(&mut self, id: impl Into<String>, policy: LinearPolicy) {
        self.policies.insert(id.into(), Arc::new(policy));
    }

    pub fn get(&self, id: &str) -> Option<Arc<LinearPolicy>> {
        self.policies.get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn list(&self) -> Vec<PolicyInfo> {
        self.policies
            .iter()
            .map(|(id, p)| PolicyInfo {
                id: id.clone(),
                method: p.embedding_mode(),
                input_dim: p.input_dim(),
                embedding_dim: p.embedding_dim(),
                hash: p.content_hash(),
            })
            .collect()
    }
}
