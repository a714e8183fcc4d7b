use crate::embedding::ContextEmbedding;
use crate::env::{EnvConfig, Environment, SurrogateEnv};
use crate::error::Result;
use crate::policy::{LinearPolicy, RunningStats};
use crate::terrain::TerrainParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub reward: f64,
    pub steps: usize,
    /// Statistics of every raw observation the policy saw.
    pub stats: RunningStats,
}

/// Runs one episode to termination or `cap` steps, whichever comes first.
///
/// `probe` sees the full policy input (normalized observation and context)
/// at every step.
pub fn run_episode<E: Environment + ?Sized>(
    env: &mut E,
    policy: &LinearPolicy,
    embedding: &ContextEmbedding,
    seed: u64,
    cap: usize,
    mut probe: Option<&mut dyn FnMut(&[f64])>,
) -> Result<Rollout> {
    policy.check_embedding(embedding)?;
    let mut obs = env.reset(seed);
    let mut stats = RunningStats::new(policy.obs_dim());
    let mut reward = 0.0;
    let mut steps = 0;
    while steps < cap {
        stats.push(&obs);
        let input = policy.input_vector(&obs, embedding)?;
        if let Some(p) = probe.as_mut() {
            p(&input);
        }
        let action = policy.apply(&input);
        let t = env.step(&action)?;
        reward += t.reward;
        steps += 1;
        obs = t.observation;
        if t.done {
            break;
        }
    }
    Ok(Rollout {
        reward,
        steps,
        stats,
    })
}

/// Undiscounted return of one surrogate episode.
pub fn episode_reward(
    policy: &LinearPolicy,
    terrain: &TerrainParams,
    embedding: &ContextEmbedding,
    seed: u64,
    env_config: EnvConfig,
) -> Result<f64> {
    let mut env = SurrogateEnv::new(*terrain, env_config);
    let cap = env_config.max_steps;
    Ok(run_episode(&mut env, policy, embedding, seed, cap, None)?.reward)
}
