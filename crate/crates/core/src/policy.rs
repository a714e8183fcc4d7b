//! Linear policy with running normalization of the raw sensor entries.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{BlockOrder, ContextEmbedding, Method};
use crate::error::{Error, Result};

pub const POLICY_FORMAT_VERSION: u32 = 1;
const VAR_EPS: f64 = 1e-8;

/// Streaming mean/variance (Welford), mergeable with Chan's formula.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn from_parts(count: u64, mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::Argument("obs_mean and obs_var lengths differ".into()));
        }
        if var.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Argument("obs_var entries must be finite and >= 0".into()));
        }
        let m2 = var.iter().map(|v| v * count as f64).collect();
        Ok(Self { count, mean, m2 })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population variance; 1 until two samples have been seen.
    pub fn var(&self) -> Vec<f64> {
        if self.count < 2 {
            vec![1.0; self.dim()]
        } else {
            self.m2.iter().map(|m| m / self.count as f64).collect()
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.dim() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.count += other.count;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyMetadata {
    pub seed: u64,
    pub env_steps: u64,
    pub config: serde_json::Value,
}

/// `action = clip(M · [normalize(obs) ⊕ context], -1, 1)`
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    action_dim: usize,
    obs_dim: usize,
    embedding_mode: Method,
    embedding_dim: usize,
    block_order: BlockOrder,
    matrix: Vec<f64>,
    stats: RunningStats,
    pub metadata: PolicyMetadata,
}

impl LinearPolicy {
    pub fn zeros(action_dim: usize, obs_dim: usize, embedding_mode: Method, embedding_dim: usize) -> Self {
        Self {
            action_dim,
            obs_dim,
            embedding_mode,
            embedding_dim,
            block_order: BlockOrder::default(),
            matrix: vec![0.0; action_dim * (obs_dim + embedding_dim)],
            stats: RunningStats::new(obs_dim),
            metadata: PolicyMetadata::default(),
        }
    }

    pub fn with_block_order(mut self, order: BlockOrder) -> Self {
        self.block_order = order;
        self
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }
    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.embedding_dim
    }
    pub fn embedding_mode(&self) -> Method {
        self.embedding_mode
    }
    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }
    pub fn block_order(&self) -> &BlockOrder {
        &self.block_order
    }
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }
    pub fn stats(&self) -> &RunningStats {
        &self.stats
    }

    pub fn set_matrix(&mut self, matrix: Vec<f64>) -> Result<()> {
        if matrix.len() != self.matrix.len() {
            return Err(Error::Argument(format!(
                "matrix has {} entries, expected {}",
                matrix.len(),
                self.matrix.len()
            )));
        }
        self.matrix = matrix;
        Ok(())
    }

    pub fn set_stats(&mut self, stats: RunningStats) -> Result<()> {
        if stats.dim() != self.obs_dim {
            return Err(Error::Argument("stats dimension does not match observation".into()));
        }
        self.stats = stats;
        Ok(())
    }

    pub fn merge_stats(&mut self, other: &RunningStats) {
        self.stats.merge(other);
    }

    pub fn check_embedding(&self, embedding: &ContextEmbedding) -> Result<()> {
        if embedding.dim() != self.embedding_dim {
            return Err(Error::Argument(format!(
                "policy expects a {}-dim {} context, got {} entries",
                self.embedding_dim,
                self.embedding_mode,
                embedding.dim()
            )));
        }
        Ok(())
    }

    /// Normalized observation followed by the raw context entries.
    pub fn input_vector(&self, observation: &[f64], embedding: &ContextEmbedding) -> Result<Vec<f64>> {
        if observation.len() != self.obs_dim {
            return Err(Error::Argument(format!(
                "observation has {} entries, expected {}",
                observation.len(),
                self.obs_dim
            )));
        }
        self.check_embedding(embedding)?;
        let var = self.stats.var();
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend(
            observation
                .iter()
                .zip(self.stats.mean())
                .zip(&var)
                .map(|((x, m), v)| (x - m) / (v + VAR_EPS).sqrt()),
        );
        input.extend(embedding.values.iter().map(|&v| f64::from(v)));
        Ok(input)
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let n = self.input_dim();
        self.matrix
            .chunks(n)
            .map(|row| {
                let a: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
                a.clamp(-1.0, 1.0)
            })
            .collect()
    }

    pub fn act(&self, observation: &[f64], embedding: &ContextEmbedding) -> Result<Vec<f64>> {
        Ok(self.apply(&self.input_vector(observation, embedding)?))
    }

    /// Copy with `M + scale · delta`; normalization statistics are shared.
    pub fn perturbed(&self, delta: &[f64], scale: f64) -> Self {
        let mut p = self.clone();
        for (m, d) in p.matrix.iter_mut().zip(delta) {
            *m += scale * d;
        }
        p
    }

    pub fn to_file(&self) -> PolicyFile {
        PolicyFile {
            format_version: POLICY_FORMAT_VERSION,
            input_dim: self.input_dim(),
            action_dim: self.action_dim,
            obs_dim: self.obs_dim,
            matrix: self.matrix.clone(),
            obs_mean: self.stats.mean().to_vec(),
            obs_var: self.stats.var(),
            obs_count: self.stats.count(),
            embedding_mode: self.embedding_mode,
            embedding_dim: self.embedding_dim,
            block_order: self.block_order.clone(),
            seed: self.metadata.seed,
            env_steps: self.metadata.env_steps,
            config: self.metadata.config.clone(),
        }
    }

    pub fn from_file(f: PolicyFile) -> Result<Self> {
        if f.format_version != POLICY_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported policy format_version {}",
                f.format_version
            )));
        }
        if f.input_dim != f.obs_dim + f.embedding_dim {
            return Err(Error::Config(format!(
                "input_dim {} != obs_dim {} + embedding_dim {}",
                f.input_dim, f.obs_dim, f.embedding_dim
            )));
        }
        let expected_ctx = match f.embedding_mode {
            Method::NoContext => Some(0),
            Method::Embedding => Some(f.block_order.dim()),
            Method::Indexing => None,
        };
        if expected_ctx.is_some_and(|d| d != f.embedding_dim) {
            return Err(Error::Config(format!(
                "{} policy cannot have embedding_dim {}",
                f.embedding_mode, f.embedding_dim
            )));
        }
        let mut p = Self::zeros(f.action_dim, f.obs_dim, f.embedding_mode, f.embedding_dim)
            .with_block_order(f.block_order);
        p.set_matrix(f.matrix)
            .map_err(|e| Error::Config(e.to_string()))?;
        p.set_stats(RunningStats::from_parts(f.obs_count, f.obs_mean, f.obs_var)?)?;
        p.metadata = PolicyMetadata {
            seed: f.seed,
            env_steps: f.env_steps,
            config: f.config,
        };
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the serialized policy.
    pub fn content_hash(&self) -> String {
        let json = self.to_json().unwrap_or_default();
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// On-disk policy layout; the matrix is row-major `action_dim × input_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format_version: u32,
    pub input_dim: usize,
    pub action_dim: usize,
    pub obs_dim: usize,
    pub matrix: Vec<f64>,
    pub obs_mean: Vec<f64>,
    pub obs_var: Vec<f64>,
    #[serde(default)]
    pub obs_count: u64,
    pub embedding_mode: Method,
    pub embedding_dim: usize,
    pub block_order: BlockOrder,
    pub seed: u64,
    pub env_steps: u64,
    #[serde(default)]
    pub config: serde_json::Value,
}
