//! Deterministic stepping engine behind live sessions.
//!
//! A [`SessionSim`] owns one surrogate environment and one policy and
//! advances them a step at a time. Everything that changes the course of
//! the simulation from outside (context swaps, terrain retargeting, episode
//! resets) is recorded in a journal keyed by the global step count at which
//! it took effect, so [`replay`] can rebuild the exact same trajectory
//! offline without a translator.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::embedding::{embed_with_order, ContextEmbedding, Method};
use crate::env::{Action, EnvConfig, Observation, SurrogateEnv};
use crate::error::{Error, Result};
use crate::policy::LinearPolicy;
use crate::terrain::{levels_to_params, quantize, PropertyLevels, TerrainParams};

/// Why a state event was emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Step,
    Context,
    Reset,
}

/// Snapshot of a session after a step or an external event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEvent {
    pub kind: EventKind,
    /// Episode counter, starting at 0 and bumped by every reset.
    pub episode: u32,
    /// Step index within the episode.
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub reward_cumulative: f64,
    pub contacts: [u8; 4],
    pub embedding: Vec<u8>,
    pub last_description: Option<String>,
    pub done: bool,
}

/// One externally caused change, in the order it was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalEntry {
    Start {
        policy_hash: String,
        terrain: TerrainParams,
        seed: u64,
        max_steps: usize,
        embedding: Vec<u8>,
        description: Option<String>,
    },
    Context {
        /// Global step count (across episodes) when the swap took effect.
        at: u64,
        description: String,
        levels: PropertyLevels,
        /// Terrain the environment switched to, when retargeting was asked for.
        terrain: Option<TerrainParams>,
    },
    Reset {
        at: u64,
        seed: u64,
    },
}

pub fn write_journal<W: Write>(mut out: W, entries: &[JournalEntry]) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n").map_err(|e| Error::io("<journal>", e))?;
    }
    Ok(())
}

pub fn read_journal<R: BufRead>(input: R) -> Result<Vec<JournalEntry>> {
    let mut entries = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<journal>", e))?;
        if !line.trim().is_empty() {
            entries.push(serde_json::from_str(&line)?);
        }
    }
    Ok(entries)
}

/// Context a fresh session starts with: the translated levels for Embedding
/// policies, all zeros for Indexing and nothing for NoContext.
pub fn initial_embedding(policy: &LinearPolicy, levels: &PropertyLevels) -> ContextEmbedding {
    match policy.embedding_mode() {
        Method::NoContext => ContextEmbedding::empty(),
        Method::Indexing => ContextEmbedding {
            mode: Method::Indexing,
            values: vec![0; policy.embedding_dim()],
        },
        Method::Embedding => embed_with_order(levels, policy.block_order()),
    }
}

/// Resolves the terrain and initial context of a new session. Explicit
/// parameters win over the ones implied by the translated levels; without
/// levels the context follows the quantized parameters.
pub fn session_setup(
    policy: &LinearPolicy,
    levels: Option<&PropertyLevels>,
    terrain: Option<TerrainParams>,
) -> Result<(TerrainParams, ContextEmbedding)> {
    let (terrain, levels) = match (levels, terrain) {
        (Some(l), Some(t)) => (t, *l),
        (Some(l), None) => (levels_to_params(l), *l),
        (None, Some(t)) => (t, quantize(&t)),
        (None, None) => {
            return Err(Error::Argument(
                "a session needs a description or explicit terrain parameters".into(),
            ))
        }
    };
    Ok((terrain, initial_embedding(policy, &levels)))
}

#[derive(Debug, Clone)]
pub struct SessionSim {
    env: SurrogateEnv,
    policy: LinearPolicy,
    embedding: ContextEmbedding,
    description: Option<String>,
    observation: Observation,
    seed: u64,
    episode: u32,
    reward_cumulative: f64,
    total_steps: u64,
    journal: Vec<JournalEntry>,
}

impl SessionSim {
    pub fn new(
        policy: LinearPolicy,
        terrain: TerrainParams,
        embedding: ContextEmbedding,
        description: Option<String>,
        seed: u64,
        env_config: EnvConfig,
    ) -> Result<Self> {
        policy.check_embedding(&embedding)?;
        let mut env = SurrogateEnv::new(terrain, env_config);
        let observation = env.reset_episode(seed);
        let start = JournalEntry::Start {
            policy_hash: policy.content_hash(),
            terrain,
            seed,
            max_steps: env_config.max_steps,
            embedding: embedding.values.clone(),
            description: description.clone(),
        };
        Ok(Self {
            env,
            policy,
            embedding,
            description,
            observation,
            seed,
            episode: 0,
            reward_cumulative: 0.0,
            total_steps: 0,
            journal: vec![start],
        })
    }

    pub fn policy(&self) -> &LinearPolicy {
        &self.policy
    }

    pub fn embedding(&self) -> &ContextEmbedding {
        &self.embedding
    }

    pub fn terrain(&self) -> &TerrainParams {
        self.env.terrain()
    }

    pub fn is_done(&self) -> bool {
        self.env.is_done()
    }

    pub fn episode(&self) -> u32 {
        self.episode
    }

    pub fn t(&self) -> usize {
        self.env.state().step_index
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn reward_cumulative(&self) -> f64 {
        self.reward_cumulative
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn snapshot(&self, kind: EventKind) -> StateEvent {
        let s = self.env.state();
        StateEvent {
            kind,
            episode: self.episode,
            t: s.step_index,
            x: s.x,
            y: s.y,
            h: s.h,
            reward_cumulative: self.reward_cumulative,
            contacts: self.observation.contacts().map(|c| c as u8),
            embedding: self.embedding.values.clone(),
            last_description: self.description.clone(),
            done: self.env.is_done(),
        }
    }

    /// Advances one step with the current embedding.
    pub fn step(&mut self) -> Result<StateEvent> {
        let input = self.policy.input_vector(&self.observation.0, &self.embedding)?;
        let action = Action::from_slice(&self.policy.apply(&input))?;
        let r = self.env.step_action(&action)?;
        self.observation = r.observation;
        self.reward_cumulative += r.reward;
        self.total_steps += 1;
        Ok(self.snapshot(EventKind::Step))
    }

    /// Swaps in the context for `levels`; it is used from the next step on.
    /// Returns whether the embedding changed.
    pub fn apply_context(
        &mut self,
        description: &str,
        levels: &PropertyLevels,
        retarget_terrain: bool,
    ) -> Result<bool> {
        if self.policy.embedding_mode() != Method::Embedding {
            return Err(Error::State("policy consumes no language context".into()));
        }
        let embedding = embed_with_order(levels, self.policy.block_order());
        let changed = embedding != self.embedding;
        let terrain = retarget_terrain.then(|| levels_to_params(levels));
        if let Some(t) = terrain {
            self.env.set_terrain(t);
        }
        self.embedding = embedding;
        self.description = Some(description.to_string());
        self.journal.push(JournalEntry::Context {
            at: self.total_steps,
            description: description.to_string(),
            levels: *levels,
            terrain,
        });
        Ok(changed)
    }

    /// Starts a new episode on the same terrain with the next episode seed.
    pub fn reset(&mut self) -> StateEvent {
        self.episode += 1;
        let seed = self.seed.wrapping_add(self.episode as u64);
        self.reset_with_seed(seed)
    }

    fn reset_with_seed(&mut self, seed: u64) -> StateEvent {
        self.observation = self.env.reset_episode(seed);
        self.reward_cumulative = 0.0;
        self.journal.push(JournalEntry::Reset {
            at: self.total_steps,
            seed,
        });
        self.snapshot(EventKind::Reset)
    }
}

/// Rebuilds a session from its journal and steps it until `total_steps`
/// global steps have been taken (or the final episode ends).
pub fn replay(policy: LinearPolicy, journal: &[JournalEntry], total_steps: u64) -> Result<SessionSim> {
    let Some(JournalEntry::Start {
        policy_hash,
        terrain,
        seed,
        max_steps,
        embedding,
        description,
    }) = journal.first()
    else {
        return Err(Error::Argument("journal must begin with a start entry".into()));
    };
    if *policy_hash != policy.content_hash() {
        return Err(Error::Argument("journal was recorded with a different policy".into()));
    }
    let embedding = ContextEmbedding {
        mode: policy.embedding_mode(),
        values: embedding.clone(),
    };
    let config = EnvConfig::default().with_max_steps(*max_steps);
    let mut sim = SessionSim::new(policy, *terrain, embedding, description.clone(), *seed, config)?;

    let advance = |sim: &mut SessionSim, until: u64| -> Result<()> {
        while sim.total_steps < until {
            if sim.is_done() {
                return Err(Error::Argument(format!(
                    "journal expects step {until} but the episode ended at {}",
                    sim.total_steps
                )));
            }
            sim.step()?;
        }
        Ok(())
    };
    for entry in &journal[1..] {
        match entry {
            JournalEntry::Start { .. } => {
                return Err(Error::Argument("journal has more than one start entry".into()))
            }
            JournalEntry::Context {
                at,
                description,
                levels,
                terrain,
            } => {
                advance(&mut sim, *at)?;
                sim.apply_context(description, levels, terrain.is_some())?;
            }
            JournalEntry::Reset { at, seed } => {
                advance(&mut sim, *at)?;
                sim.episode += 1;
                sim.reset_with_seed(*seed);
            }
        }
    }
    while sim.total_steps < total_steps && !sim.is_done() {
        sim.step()?;
    }
    Ok(sim)
}
