use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvpo_core::envs::{rubric_is_hard, RUBRIC_CRITERIA};
use rvpo_core::{train_run, AggregationMethod, EnvSpec, RiskSchedule, TrainingConfig, WeightedChannelSpec};

fn config(env: &EnvSpec, method: AggregationMethod, steps: usize, seed: u64) -> TrainingConfig {
    TrainingConfig {
        total_steps: steps,
        ..TrainingConfig::for_env(env)
    }
    .with_method(method)
    .with_seed(seed)
}

#[test]
fn rubric_masks_stay_within_bounds() {
    let env = EnvSpec::preset("rubric").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..500 {
        let (ctx, mask) = env.sample_prompt(&mut rng);
        let active = mask.iter().filter(|&&a| a).count();
        assert!((5..=RUBRIC_CRITERIA).contains(&active));
        assert!(ctx < env.context_count);
    }
}

#[test]
fn rubric_runs_with_prenormalization_weights() {
    let env = EnvSpec::preset("rubric").unwrap();
    let mut cfg = config(&env, AggregationMethod::Rvpo(RiskSchedule::linear(0.5, 2.0, 20).unwrap()), 20, 1);
    cfg.weighting = WeightedChannelSpec::pre(env.weights());
    let run = train_run(&env, &cfg).unwrap();
    assert!(run.failure.is_none());
    assert_eq!(run.steps.len(), 20);
    assert_eq!(run.steps[0].coefficient, Some(0.5));
    assert_eq!(run.steps[19].coefficient, Some(2.0));
    let last = run.last().unwrap();
    assert_eq!(last.advantages.len(), cfg.group_size * cfg.prompts_per_step);
    assert!(last.channel_satisfaction.iter().all(|s| s.is_none_or(|v| (0.0..=1.0).contains(&v))));
    assert!((0..RUBRIC_CRITERIA).any(rubric_is_hard));
}

#[test]
fn weighted_scalar_baseline_trains_on_rubrics() {
    let env = EnvSpec::preset("rubric").unwrap();
    let cfg = config(&env, AggregationMethod::GrpoExplicitScalar(env.weights()), 10, 2);
    let run = train_run(&env, &cfg).unwrap();
    assert_eq!(run.steps.len(), 10);
    assert_eq!(run.steps[0].coefficient, None);
}

#[test]
fn small_k_training_matches_mean_aggregation() {
    let env = EnvSpec::preset("bandit").unwrap();
    for seed in 0..3 {
        let a = train_run(&env, &config(&env, AggregationMethod::Gdpo, 50, seed)).unwrap();
        let b = train_run(&env, &config(&env, AggregationMethod::Rvpo(RiskSchedule::Constant(1e-8)), 50, seed)).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            for (p, q) in x.advantages.iter().zip(&y.advantages) {
                assert!((p - q).abs() <= 1e-5);
            }
        }
    }
}

#[test]
fn softmin_prefers_balanced_over_exploit() {
    let env = EnvSpec::preset("bandit").unwrap();
    let balanced = env.action_index("balanced").unwrap();
    let exploit = env.action_index("exploit").unwrap();
    let grpo = train_run(&env, &config(&env, AggregationMethod::Grpo, 200, 4)).unwrap();
    let rvpo = train_run(&env, &config(&env, AggregationMethod::Rvpo(RiskSchedule::Constant(1.0)), 200, 4)).unwrap();
    let g = &grpo.last().unwrap().probs[0];
    let r = &rvpo.last().unwrap().probs[0];
    assert!(g[exploit] > g[balanced]);
    assert!(r[balanced] > r[exploit]);
}
