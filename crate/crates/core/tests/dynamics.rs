use ctxloco_core::embedding::{embed, Method};
use ctxloco_core::env::{transmitted_thrust, Action, EnvConfig, SurrogateEnv, ACTION_DIM, OBS_DIM};
use ctxloco_core::policy::LinearPolicy;
use ctxloco_core::rollout::episode_reward;
use ctxloco_core::terrain::{levels_to_params, PropertyLevels, TerrainParams};

/// Total forward displacement over `steps` steps of constant thrust.
fn displacement(terrain: TerrainParams, thrust: f64, steps: usize) -> f64 {
    let mut env = SurrogateEnv::new(terrain, EnvConfig::default());
    env.reset_episode(0);
    let mut dx = 0.0;
    for _ in 0..steps {
        dx += env.step_action(&Action::thrust(thrust)).unwrap().info.dx;
    }
    dx
}

#[test]
fn displacement_rises_with_friction() {
    let base = TerrainParams::nominal();
    let d: Vec<f64> = [0.1, 0.5, 0.9]
        .iter()
        .map(|&f| displacement(base.with_lateral_friction(f).unwrap(), 1.0, 500))
        .collect();
    assert!(d[0] < d[1] && d[1] < d[2], "{d:?}");
}

#[test]
fn displacement_falls_with_damping() {
    let base = TerrainParams::nominal();
    let d: Vec<f64> = [0.05, 0.25, 0.45]
        .iter()
        .map(|&c| displacement(base.with_damping(c).unwrap(), 1.0, 500))
        .collect();
    assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
}

#[test]
fn friction_is_monotone_for_every_fixed_thrust() {
    for i in 0..=10 {
        let thrust = i as f64 / 10.0;
        let mut prev = f64::NEG_INFINITY;
        for j in 0..=10 {
            let f = j as f64 / 10.0;
            let d = displacement(TerrainParams::nominal().with_lateral_friction(f).unwrap(), thrust, 200);
            assert!(d >= prev - 1e-12, "thrust {thrust}, friction {f}: {d} < {prev}");
            prev = d;
        }
        let mut prev = f64::NEG_INFINITY;
        for j in 0..=10 {
            let t = transmitted_thrust(thrust, j as f64 / 10.0);
            assert!(t >= prev && t <= thrust, "thrust {thrust}: {t}");
            prev = t;
        }
    }
}

#[test]
fn passive_motion_decays_every_step() {
    let terrains = [
        TerrainParams::nominal(),
        TerrainParams::new(0.2, 1.0, 1.6e5, 1.0, 0.5).unwrap(),
        TerrainParams::new(0.0, 0.0, 2.0e4, 0.0, 0.0).unwrap(),
    ];
    for terrain in terrains {
        let mut env = SurrogateEnv::new(terrain, EnvConfig::default());
        env.reset_episode(1);
        for _ in 0..100 {
            env.step_action(&Action::thrust(1.0)).unwrap();
        }
        let mut prev = env.state().vx.abs();
        for step in 0..500 {
            env.step_action(&Action::zero()).unwrap();
            let v = env.state().vx.abs();
            assert!(v <= prev, "{terrain:?} step {step}: |vx| grew {prev} -> {v}");
            prev = v;
        }
    }
}

#[test]
fn episode_is_a_pure_function_of_inputs() {
    let run = || {
        let mut env = SurrogateEnv::new(TerrainParams::nominal(), EnvConfig::default().with_max_steps(300));
        let mut trace = vec![env.reset_episode(17).0.to_vec()];
        for i in 0..300 {
            let a = Action::from_slice(&[(i as f64 * 0.1).sin(); ACTION_DIM]).unwrap();
            trace.push(env.step_action(&a).unwrap().observation.0.to_vec());
        }
        trace
    };
    assert_eq!(run(), run());
}

/// Regression value recorded from a single run of the surrogate: an
/// Embedding policy whose thrust rows put 0.25 on every context entry, so
/// the four one-hot ones give full constant thrust, on all-Medium terrain.
#[test]
fn constant_thrust_regression() {
    let levels = PropertyLevels::default();
    let mut policy = LinearPolicy::zeros(ACTION_DIM, OBS_DIM, Method::Embedding, 20);
    let cols = policy.input_dim();
    let mut m = vec![0.0; ACTION_DIM * cols];
    for row in 0..4 {
        for col in OBS_DIM..cols {
            m[row * cols + col] = 0.25;
        }
    }
    policy.set_matrix(m).unwrap();
    let config = EnvConfig::default().with_max_steps(1000);
    let r = episode_reward(&policy, &levels_to_params(&levels), &embed(&levels), 42, config).unwrap();
    assert!(r > 0.0);
    assert!((r - 1.8320711154596134).abs() < 1e-9, "{r:.17}");
}
