//! Augmented Random Search (ARS V2-t) over a [`LinearPolicy`].
//!
//! Each iteration samples `N` Gaussian direction matrices, evaluates the
//! policy at `M ± ν·δ` on the same terrain and episode seed, keeps the
//! `b` directions with the best `max(r+, r-)`, and steps along the
//! reward-difference-weighted directions scaled by the spread of the
//! retained rewards.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{embed_with_order, index_embedding, BlockOrder, ContextEmbedding, Method};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::policy::LinearPolicy;
use crate::rollout::{run_episode, Rollout};
use crate::terrain::{describe_low_level, quantize, sample_stratified, TerrainParams};
use crate::translator::Translator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArsConfig {
    pub step_size: f64,
    pub n_directions: usize,
    pub noise: f64,
    pub top_b: usize,
    pub max_env_steps: u64,
    pub episode_cap: usize,
    pub n_train_scenarios: usize,
    pub seed: u64,
    /// Recorded only; episodic returns are undiscounted.
    pub gamma: f64,
}

impl Default for ArsConfig {
    fn default() -> Self {
        Self {
            step_size: 0.03,
            n_directions: 16,
            noise: 0.05,
            top_b: 8,
            max_env_steps: 2_000_000,
            episode_cap: 5000,
            n_train_scenarios: 8,
            seed: 0,
            gamma: 1.0,
        }
    }
}

impl ArsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::Config("step_size must be > 0".into()));
        }
        if !(self.noise > 0.0) {
            return Err(Error::Config("noise must be > 0".into()));
        }
        if self.n_directions == 0 || self.top_b == 0 || self.top_b > self.n_directions {
            return Err(Error::Config(format!(
                "need 1 <= top_b ({}) <= n_directions ({})",
                self.top_b, self.n_directions
            )));
        }
        if self.episode_cap == 0 || self.n_train_scenarios == 0 {
            return Err(Error::Config("episode_cap and n_train_scenarios must be positive".into()));
        }
        if self.max_env_steps < self.steps_per_iteration() {
            return Err(Error::Config(format!(
                "budget < one iteration: {} env steps requested, one iteration needs up to {}",
                self.max_env_steps,
                self.steps_per_iteration()
            )));
        }
        Ok(())
    }

    /// Upper bound on env steps consumed by one iteration.
    pub fn steps_per_iteration(&self) -> u64 {
        2 * self.n_directions as u64 * self.episode_cap as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub env_steps: u64,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub sigma_r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArsUpdate {
    pub matrix: Vec<f64>,
    pub sigma_r: f64,
}

/// One ARS step. `rewards[k]` is `(r+, r-)` for `deltas[k]`.
///
/// Ties in the ranking keep the lower direction index first. When the
/// retained rewards have zero spread the matrix is returned unchanged.
pub fn ars_update(
    matrix: &[f64],
    deltas: &[Vec<f64>],
    rewards: &[(f64, f64)],
    config: &ArsConfig,
) -> ArsUpdate {
    assert_eq!(deltas.len(), rewards.len(), "one reward pair per direction");
    let b = config.top_b.min(deltas.len());
    let mut order: Vec<usize> = (0..rewards.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = rewards[i].0.max(rewards[i].1);
        let rj = rewards[j].0.max(rewards[j].1);
        rj.total_cmp(&ri)
    });
    let top = &order[..b];

    let retained: Vec<f64> = top.iter().flat_map(|&k| [rewards[k].0, rewards[k].1]).collect();
    let mean = retained.iter().sum::<f64>() / retained.len() as f64;
    let sigma_r = (retained.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / retained.len() as f64).sqrt();

    let mut next = matrix.to_vec();
    if sigma_r > 0.0 {
        let scale = config.step_size / (b as f64 * sigma_r);
        for &k in top {
            let diff = rewards[k].0 - rewards[k].1;
            for (m, d) in next.iter_mut().zip(&deltas[k]) {
                *m += scale * diff * d;
            }
        }
    }
    ArsUpdate { matrix: next, sigma_r }
}

/// What the optimizer needs to know about one rollout.
pub struct RolloutRequest<'a> {
    pub policy: &'a LinearPolicy,
    pub direction: usize,
    pub episode_seed: u64,
}

/// Generic ARS loop. `rollout` must be a pure function of its request so
/// that parallel and sequential evaluation agree.
///
/// Observation statistics are frozen during an iteration and updated
/// afterwards from every rollout, merged in direction order.
pub fn optimize<F>(
    policy: &mut LinearPolicy,
    config: &ArsConfig,
    rng: &mut ChaCha8Rng,
    jobs: Option<usize>,
    rollout: F,
) -> Result<Vec<IterationRecord>>
where
    F: Fn(RolloutRequest<'_>) -> Result<Rollout> + Sync,
{
    config.validate()?;
    let pool = match jobs {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?,
        ),
        None => None,
    };

    let n = config.n_directions;
    let dim = policy.matrix().len();
    let mut env_steps = 0u64;
    let mut records = Vec::new();
    let mut iteration = 0;
    while env_steps + config.steps_per_iteration() <= config.max_env_steps {
        let deltas: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let seeds: Vec<u64> = (0..n).map(|_| rng.random()).collect();

        let candidates: Vec<LinearPolicy> = (0..2 * n)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                policy.perturbed(&deltas[i / 2], sign * config.noise)
            })
            .collect();
        let run = || -> Result<Vec<Rollout>> {
            candidates
                .par_iter()
                .enumerate()
                .map(|(i, p)| {
                    rollout(RolloutRequest {
                        policy: p,
                        direction: i / 2,
                        episode_seed: seeds[i / 2],
                    })
                })
                .collect()
        };
        let outcomes = match &pool {
            Some(pool) => pool.install(run)?,
            None => run()?,
        };

        let rewards: Vec<(f64, f64)> = outcomes
            .chunks(2)
            .map(|pair| (pair[0].reward, pair[1].reward))
            .collect();
        let update = ars_update(policy.matrix(), &deltas, &rewards, config);
        policy.set_matrix(update.matrix)?;
        for o in &outcomes {
            policy.merge_stats(&o.stats);
            env_steps += o.steps as u64;
        }

        let all: Vec<f64> = outcomes.iter().map(|o| o.reward).collect();
        records.push(IterationRecord {
            iteration,
            env_steps,
            mean_reward: all.iter().sum::<f64>() / all.len() as f64,
            max_reward: all.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            sigma_r: update.sigma_r,
        });
        log::debug!(
            "iter {iteration}: steps {env_steps}, mean reward {:.4}",
            records.last().unwrap().mean_reward
        );
        iteration += 1;
    }
    policy.metadata.env_steps = env_steps;
    Ok(records)
}

/// Context vector a training rollout on `scenario` receives.
///
/// The embedding route goes terrain → levels → sentence → translator so the
/// whole language path is exercised.
pub fn training_context(
    method: Method,
    scenario: usize,
    terrain: &TerrainParams,
    n_scenarios: usize,
    translator: &Translator,
    order: &BlockOrder,
) -> Result<ContextEmbedding> {
    match method {
        Method::NoContext => Ok(ContextEmbedding::empty()),
        Method::Indexing => index_embedding(scenario, n_scenarios, true),
        Method::Embedding => {
            let text = describe_low_level(&quantize(terrain));
            let levels = translator.translate(&text)?.levels;
            Ok(embed_with_order(&levels, order))
        }
    }
}

pub fn context_dim(method: Method, n_scenarios: usize, order: &BlockOrder) -> usize {
    match method {
        Method::NoContext => 0,
        Method::Indexing => n_scenarios,
        Method::Embedding => order.dim(),
    }
}

/// Training scenarios drawn from the head of the seeded stream, stratified
/// so that every level of every property is represented.
pub fn training_scenarios(rng: &mut ChaCha8Rng, n: usize) -> Vec<TerrainParams> {
    sample_stratified(rng, n)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: LinearPolicy,
    pub records: Vec<IterationRecord>,
    pub scenarios: Vec<TerrainParams>,
}

pub struct TrainOptions<'a> {
    pub translator: &'a Translator,
    pub block_order: BlockOrder,
    pub jobs: Option<usize>,
}

/// Domain-randomized ARS training on environments built by `env_factory`.
///
/// Direction `k` rolls out on scenario `k mod n_train_scenarios`.
pub fn train<E, F>(
    env_factory: F,
    method: Method,
    config: &ArsConfig,
    options: &TrainOptions<'_>,
) -> Result<TrainOutcome>
where
    E: Environment,
    F: Fn(&TerrainParams) -> E + Sync,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scenarios = training_scenarios(&mut rng, config.n_train_scenarios);
    let contexts: Vec<ContextEmbedding> = scenarios
        .iter()
        .enumerate()
        .map(|(i, t)| {
            training_context(
                method,
                i,
                t,
                config.n_train_scenarios,
                options.translator,
                &options.block_order,
            )
        })
        .collect::<Result<_>>()?;

    let probe_env = env_factory(&scenarios[0]);
    let ctx_dim = context_dim(method, config.n_train_scenarios, &options.block_order);
    let mut policy = LinearPolicy::zeros(probe_env.action_dim(), probe_env.observation_dim(), method, ctx_dim)
        .with_block_order(options.block_order.clone());
    policy.metadata.seed = config.seed;
    policy.metadata.config = serde_json::to_value(config)?;

    let records = optimize(&mut policy, config, &mut rng, options.jobs, |req| {
        let s = req.direction % scenarios.len();
        let mut env = env_factory(&scenarios[s]);
        run_episode(
            &mut env,
            req.policy,
            &contexts[s],
            req.episode_seed,
            config.episode_cap,
            None,
        )
    })?;
    policy.metadata.env_steps = records.last().map_or(0, |r| r.env_steps);
    Ok(TrainOutcome {
        policy,
        records,
        scenarios,
    })
}

pub const CURVE_HEADER: &str = "iteration,env_steps,mean_reward,max_reward,sigma_r";

pub fn write_curve_csv<W: Write>(mut out: W, records: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.iteration, r.env_steps, r.mean_reward, r.max_reward, r.sigma_r
        )?;
    }
    Ok(())
}

pub fn save_curve(path: &Path, records: &[IterationRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::new();
    write_curve_csv(&mut buf, records).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_1x1() -> ArsConfig {
        ArsConfig {
            n_directions: 2,
            top_b: 2,
            ..ArsConfig::default()
        }
    }

    #[test]
    fn hand_computed_1x1_update() {
        // sigma = std{2, 0, 1, 1} = sqrt(0.5); 0.03 / (2 sqrt(0.5)) * (2*1 + 0*(-1))
        let u = ars_update(&[0.0], &[vec![1.0], vec![-1.0]], &[(2.0, 0.0), (1.0, 1.0)], &cfg_1x1());
        assert!((u.sigma_r - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((u.matrix[0] - 0.042_426_406_871_192_85).abs() < 1e-9);
    }

    #[test]
    fn symmetric_rewards_do_not_move() {
        let u = ars_update(&[0.3, -0.2], &[vec![1.0, 2.0], vec![-3.0, 0.5]], &[(5.0, 5.0), (1.0, 1.0)], &cfg_1x1());
        assert_eq!(u.matrix, vec![0.3, -0.2]);
    }

    #[test]
    fn zero_spread_skips_update() {
        let u = ars_update(&[1.0], &[vec![1.0], vec![-2.0]], &[(4.0, 4.0), (4.0, 4.0)], &cfg_1x1());
        assert_eq!(u.sigma_r, 0.0);
        assert_eq!(u.matrix, vec![1.0]);
    }

    #[test]
    fn only_top_directions_contribute() {
        let cfg = ArsConfig {
            n_directions: 3,
            top_b: 1,
            ..ArsConfig::default()
        };
        // direction 1 has the best max reward; others must be ignored
        let u = ars_update(
            &[0.0, 0.0, 0.0],
            &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            &[(1.0, 0.0), (3.0, 1.0), (0.0, 2.5)],
            &cfg,
        );
        assert_eq!(u.matrix[0], 0.0);
        assert_eq!(u.matrix[2], 0.0);
        // sigma of {3, 1} = 1
        assert!((u.matrix[1] - 0.03 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(ArsConfig::default().validate().is_ok());
        let zero = ArsConfig {
            max_env_steps: 0,
            ..ArsConfig::default()
        };
        assert!(zero.validate().unwrap_err().to_string().contains("budget < one iteration"));
        let bad_b = ArsConfig {
            top_b: 17,
            ..ArsConfig::default()
        };
        assert!(bad_b.validate().is_err());
    }

    #[test]
    fn curve_csv_layout() {
        let mut buf = Vec::new();
        write_curve_csv(
            &mut buf,
            &[IterationRecord {
                iteration: 0,
                env_steps: 320,
                mean_reward: 1.5,
                max_reward: 2.0,
                sigma_r: 0.25,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,env_steps,mean_reward,max_reward,sigma_r\n0,320,1.5,2,0.25\n"
        );
    }
}
