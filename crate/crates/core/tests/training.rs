use std::collections::BTreeMap;

use ctxloco_core::ars::{train, write_curve_csv, ArsConfig, TrainOptions};
use ctxloco_core::embedding::{BlockOrder, Method};
use ctxloco_core::env::{EnvConfig, SurrogateEnv, OBS_DIM};
use ctxloco_core::eval::{builtin_cases, evaluate_with_probe, run_study, EvalSettings};
use ctxloco_core::policy::LinearPolicy;
use ctxloco_core::translator::Translator;

fn small_config(seed: u64) -> ArsConfig {
    ArsConfig {
        max_env_steps: 16_000,
        episode_cap: 50,
        seed,
        ..ArsConfig::default()
    }
}

fn run(method: Method, seed: u64, jobs: Option<usize>) -> (LinearPolicy, Vec<u8>) {
    let translator = Translator::mock();
    let cfg = small_config(seed);
    let env = EnvConfig::default().with_max_steps(cfg.episode_cap);
    let options = TrainOptions {
        translator: &translator,
        block_order: BlockOrder::default(),
        jobs,
    };
    let out = train(|t| SurrogateEnv::new(*t, env), method, &cfg, &options).unwrap();
    let mut curve = Vec::new();
    write_curve_csv(&mut curve, &out.records).unwrap();
    (out.policy, curve)
}

#[test]
fn parallel_and_sequential_training_agree() {
    for method in Method::ALL {
        let (p1, c1) = run(method, 4, Some(1));
        let (p4, c4) = run(method, 4, Some(4));
        let (pg, cg) = run(method, 4, None);
        assert_eq!(c1, c4, "{method}");
        assert_eq!(c1, cg, "{method}");
        assert_eq!(p1.to_json().unwrap(), p4.to_json().unwrap());
        assert_eq!(p1.to_json().unwrap(), pg.to_json().unwrap());
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let (_, a) = run(Method::Embedding, 1, None);
    let (_, b) = run(Method::Embedding, 2, None);
    assert_ne!(a, b);
}

#[test]
fn trained_policy_is_well_formed_and_round_trips() {
    let (policy, curve) = run(Method::Embedding, 5, None);
    assert_eq!(String::from_utf8(curve).unwrap().lines().count(), 1 + 10);
    assert_eq!(policy.input_dim(), OBS_DIM + 20);
    assert_eq!(policy.metadata.env_steps, 16_000);
    let stats = policy.stats();
    assert!(stats.count() > 0);
    for (m, v) in stats.mean().iter().zip(stats.var()) {
        assert!(m.is_finite() && v.is_finite() && v >= 0.0);
    }
    // Contact flags are 0/1, so their running means must lie in [0, 1].
    for m in &stats.mean()[12..16] {
        assert!((0.0..=1.0).contains(m), "{m}");
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    policy.save(&path).unwrap();
    let back = LinearPolicy::load(&path).unwrap();
    assert_eq!(back.to_json().unwrap(), policy.to_json().unwrap());
    assert_eq!(back.content_hash(), policy.content_hash());
}

#[test]
fn indexing_policies_see_zero_context_at_evaluation() {
    let (policy, _) = run(Method::Indexing, 6, None);
    assert_eq!(policy.embedding_dim(), 8);
    let translator = Translator::mock();
    let settings = EvalSettings {
        n_episodes: 2,
        seed: 0,
        env: EnvConfig::default().with_max_steps(60),
    };
    let mut inputs = 0usize;
    for case in builtin_cases() {
        evaluate_with_probe(
            &policy,
            &case,
            &translator,
            &settings,
            Some(|input: &[f64]| {
                assert_eq!(input.len(), OBS_DIM + 8);
                assert!(input[OBS_DIM..].iter().all(|&v| v == 0.0), "{input:?}");
                inputs += 1;
            }),
        )
        .unwrap();
    }
    assert_eq!(inputs, 10 * 2 * 60);
}

#[test]
fn study_reports_are_reproducible() {
    let policies: BTreeMap<Method, LinearPolicy> = Method::ALL.iter().map(|&m| (m, run(m, 7, None).0)).collect();
    let translator = Translator::mock();
    let settings = EvalSettings {
        n_episodes: 3,
        seed: 11,
        env: EnvConfig::default().with_max_steps(50),
    };
    let a = run_study(&policies, &Method::ALL, &builtin_cases(), &translator, &settings).unwrap();
    let b = run_study(&policies, &Method::ALL, &builtin_cases(), &translator, &settings).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    assert_eq!(a.cells.len(), 30);
    assert!(a.cells.iter().all(|c| c.error.is_none()));
    let only = BTreeMap::from([(Method::Embedding, policies[&Method::Embedding].clone())]);
    assert!(run_study(&only, &Method::ALL, &builtin_cases(), &translator, &settings).is_err());
}
