//! Group-relative policy-gradient training on a tabular softmax policy.
//!
//! Each step samples prompts, draws a group of actions per prompt from the
//! current policy, scores them on every reward channel, turns the rewards
//! into whitened advantages, and runs several clipped-surrogate gradient
//! steps with a KL penalty toward the frozen initial policy.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationMethod;
use crate::envs::{ChannelKind, EnvSpec};
use crate::error::{Result, RvpoError};
use crate::pipeline::{compute_advantages, AdvantageOptions};
use crate::rewards::{mean_std, RewardMatrix, WeightedChannelSpec};

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `sum_i p_i ln(p_i / q_i)` with `0 ln 0 = 0`.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

/// Context-by-action logits with a frozen copy of the initial logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    contexts: usize,
    actions: usize,
    logits: Vec<f64>,
    reference: Vec<f64>,
}

impl PolicyTable {
    /// Uniform policy.
    pub fn new(contexts: usize, actions: usize) -> Self {
        Self::from_logits(contexts, actions, vec![0.0; contexts * actions])
    }

    pub fn from_logits(contexts: usize, actions: usize, logits: Vec<f64>) -> Self {
        assert_eq!(logits.len(), contexts * actions, "logit table shape");
        Self {
            contexts,
            actions,
            reference: logits.clone(),
            logits,
        }
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn reference_logits(&self) -> &[f64] {
        &self.reference
    }

    /// Replaces the trainable logits; the reference is untouched.
    pub fn set_logits(&mut self, logits: Vec<f64>) {
        assert_eq!(logits.len(), self.logits.len(), "logit table shape");
        self.logits = logits;
    }

    fn row(table: &[f64], actions: usize, context: usize) -> &[f64] {
        &table[context * actions..(context + 1) * actions]
    }

    pub fn probs(&self, context: usize) -> Vec<f64> {
        softmax(Self::row(&self.logits, self.actions, context))
    }

    pub fn reference_probs(&self, context: usize) -> Vec<f64> {
        softmax(Self::row(&self.reference, self.actions, context))
    }

    pub fn all_probs(&self) -> Vec<Vec<f64>> {
        (0..self.contexts).map(|c| self.probs(c)).collect()
    }

    /// KL to the reference in the configured direction, averaged over all contexts.
    pub fn kl_to_reference(&self, direction: KlDirection) -> f64 {
        (0..self.contexts)
            .map(|c| direction.divergence(&self.probs(c), &self.reference_probs(c)))
            .sum::<f64>()
            / self.contexts as f64
    }

    fn descend(&mut self, grad: &[f64], learning_rate: f64) {
        for (l, g) in self.logits.iter_mut().zip(grad) {
            *l -= learning_rate * g;
        }
    }
}

/// One sampled response and the probability the behavior policy gave it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub context: usize,
    pub action: usize,
    pub behavior_prob: f64,
}

/// Draws `group_size` independent actions for `context` from the current policy.
pub fn sample_group<R: Rng + ?Sized>(
    policy: &PolicyTable,
    context: usize,
    group_size: usize,
    rng: &mut R,
) -> Vec<Sample> {
    let probs = policy.probs(context);
    (0..group_size)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut action = probs.len() - 1;
            for (a, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    action = a;
                    break;
                }
            }
            Sample {
                context,
                action,
                behavior_prob: probs[action],
            }
        })
        .collect()
}

/// Direction of the KL penalty between the policy and the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(pi_theta || pi_ref)`.
    #[default]
    Reverse,
    /// `KL(pi_ref || pi_theta)`.
    Forward,
}

impl KlDirection {
    fn divergence(self, policy: &[f64], reference: &[f64]) -> f64 {
        match self {
            KlDirection::Reverse => kl_categorical(policy, reference),
            KlDirection::Forward => kl_categorical(reference, policy),
        }
    }

    /// Gradient of the divergence with respect to the policy logits.
    fn logit_grad(self, policy: &[f64], reference: &[f64]) -> Vec<f64> {
        match self {
            KlDirection::Reverse => {
                let kl = kl_categorical(policy, reference);
                policy
                    .iter()
                    .zip(reference)
                    .map(|(&p, &q)| if p > 0.0 { p * ((p / q).ln() - kl) } else { 0.0 })
                    .collect()
            }
            KlDirection::Forward => policy.iter().zip(reference).map(|(p, q)| p - q).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateOptions {
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub kl_direction: KlDirection,
}

/// Samples, their advantages, and the contexts over which the KL term is averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateBatch {
    pub samples: Vec<Sample>,
    pub advantages: Vec<f64>,
    pub kl_contexts: Vec<usize>,
}

/// Clipped surrogate loss plus KL penalty, and its gradient over the logit table.
///
/// Per sample the loss is `-min(r A, clip(r, 1-e, 1+e) A)` with
/// `r = pi(a|x) / pi_behavior(a|x)`, averaged over samples; the KL term is
/// `beta_kl` times the mean KL over `kl_contexts`.
pub fn surrogate_loss_and_grad(
    policy: &PolicyTable,
    batch: &UpdateBatch,
    options: &SurrogateOptions,
) -> Result<(f64, Vec<f64>)> {
    if batch.samples.len() != batch.advantages.len() {
        return Err(RvpoError::Shape(format!(
            "{} samples with {} advantages",
            batch.samples.len(),
            batch.advantages.len()
        )));
    }
    if let Some((index, &value)) = batch.advantages.iter().enumerate().find(|(_, a)| !a.is_finite()) {
        return Err(RvpoError::NonFiniteAdvantage { index, value });
    }
    let actions = policy.actions;
    let mut grad = vec![0.0; policy.logits.len()];
    let probs = policy.all_probs();
    let (lo, hi) = (1.0 - options.clip_epsilon, 1.0 + options.clip_epsilon);

    let mut surrogate = 0.0;
    if !batch.samples.is_empty() {
        let n = batch.samples.len() as f64;
        for (s, &adv) in batch.samples.iter().zip(&batch.advantages) {
            let p = &probs[s.context];
            let ratio = p[s.action] / s.behavior_prob;
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(lo, hi) * adv;
            surrogate -= unclipped.min(clipped);
            if unclipped <= clipped {
                // d ratio / d logit_b = ratio * (1[b = a] - p_b)
                let row = &mut grad[s.context * actions..(s.context + 1) * actions];
                for (b, g) in row.iter_mut().enumerate() {
                    let indicator = if b == s.action { 1.0 } else { 0.0 };
                    *g -= adv * ratio * (indicator - p[b]) / n;
                }
            }
        }
        surrogate /= n;
    }

    let mut kl = 0.0;
    if options.kl_coefficient != 0.0 && !batch.kl_contexts.is_empty() {
        let c = batch.kl_contexts.len() as f64;
        for &ctx in &batch.kl_contexts {
            let reference = policy.reference_probs(ctx);
            kl += options.kl_direction.divergence(&probs[ctx], &reference);
            let kg = options.kl_direction.logit_grad(&probs[ctx], &reference);
            for (g, d) in grad[ctx * actions..(ctx + 1) * actions].iter_mut().zip(kg) {
                *g += options.kl_coefficient * d / c;
            }
        }
        kl /= c;
    }
    Ok((surrogate + options.kl_coefficient * kl, grad))
}

/// Maximum relative error between the analytic gradient and central differences.
///
/// Per entry the error is `|g - fd| / max(|g|, |fd|, 1e-6)`; entries where both are
/// exactly zero contribute nothing.
pub fn finite_diff_check(
    policy: &PolicyTable,
    batch: &UpdateBatch,
    options: &SurrogateOptions,
    h: f64,
) -> Result<f64> {
    let (_, analytic) = surrogate_loss_and_grad(policy, batch, options)?;
    let mut probe = policy.clone();
    let mut worst = 0.0f64;
    for (i, &grad) in analytic.iter().enumerate() {
        let base = policy.logits[i];
        probe.logits[i] = base + h;
        let (up, _) = surrogate_loss_and_grad(&probe, batch, options)?;
        probe.logits[i] = base - h;
        let (down, _) = surrogate_loss_and_grad(&probe, batch, options)?;
        probe.logits[i] = base;
        let numeric = (up - down) / (2.0 * h);
        let diff = (grad - numeric).abs();
        if diff == 0.0 {
            continue;
        }
        let scale = grad.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub group_size: usize,
    pub prompts_per_step: usize,
    pub total_steps: usize,
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub kl_direction: KlDirection,
    pub inner_epochs: usize,
    pub method: AggregationMethod,
    pub weighting: WeightedChannelSpec,
    pub advantage: AdvantageOptions,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            prompts_per_step: 8,
            total_steps: 200,
            learning_rate: 0.1,
            clip_epsilon: 0.2,
            kl_coefficient: 0.04,
            kl_direction: KlDirection::Reverse,
            inner_epochs: 4,
            method: AggregationMethod::Gdpo,
            weighting: WeightedChannelSpec::unweighted(),
            advantage: AdvantageOptions::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Defaults with the group size matched to the environment (16 for rubrics).
    pub fn for_env(env: &EnvSpec) -> Self {
        let group_size = match env.kind {
            crate::envs::EnvKind::Rubric => 16,
            _ => 4,
        };
        Self {
            group_size,
            ..Self::default()
        }
    }

    pub fn with_method(mut self, method: AggregationMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, env: &EnvSpec) -> Result<()> {
        let bad = |m: &str| Err(RvpoError::Config(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if self.prompts_per_step == 0 || self.total_steps == 0 {
            return bad("prompts_per_step and total_steps must be positive");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must be in (0, 1)");
        }
        if !(self.kl_coefficient >= 0.0 && self.kl_coefficient.is_finite()) {
            return bad("kl_coefficient must be non-negative");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        if self.inner_epochs == 0 {
            return bad("inner_epochs must be at least 1");
        }
        if let Some(s) = self.method.schedule() {
            s.validate()?;
        }
        if let AggregationMethod::GrpoExplicitScalar(w) = &self.method {
            if w.len() != env.channel_count() {
                return bad("weighted-scalar weights must cover every channel");
            }
        }
        for eps in [self.advantage.epsilon, self.advantage.whiten_epsilon] {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(RvpoError::InvalidEpsilon(eps));
            }
        }
        env.validate()
    }
}

/// Metrics recorded after each training step's update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub coefficient: Option<f64>,
    /// Mean raw reward per channel over the generations where it was active (NaN if never).
    pub channel_means: Vec<f64>,
    /// Satisfaction rate for binary channels, `None` for continuous ones.
    pub channel_satisfaction: Vec<Option<f64>>,
    /// Noise-free expected reward per channel under the updated policy.
    pub expected_channel: Vec<f64>,
    pub score_variance_mean: f64,
    pub advantage_mean: f64,
    pub advantage_std: f64,
    /// Whitened advantages used for the update, prompt-major.
    pub advantages: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
    pub kl_to_reference: f64,
    /// Surrogate loss of the final inner epoch, before its update.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steps: Vec<StepMetrics>,
    /// Set when a non-finite loss stopped the run early.
    pub failure: Option<String>,
    pub final_policy: PolicyTable,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&StepMetrics> {
        self.steps.last()
    }
}

/// Random stream for one prompt of one step, independent of every other stream.
pub fn prompt_stream(seed: u64, step: usize, prompt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 32) | prompt as u64);
    rng
}

pub fn train_run(env: &EnvSpec, config: &TrainingConfig) -> Result<RunMetrics> {
    config.validate(env)?;
    let mut policy = PolicyTable::new(env.context_count, env.action_count());
    let surrogate = SurrogateOptions {
        clip_epsilon: config.clip_epsilon,
        kl_coefficient: config.kl_coefficient,
        kl_direction: config.kl_direction,
    };
    let m = env.channel_count();
    let mut steps = Vec::with_capacity(config.total_steps);

    for step in 0..config.total_steps {
        let mut matrices = Vec::with_capacity(config.prompts_per_step);
        let mut samples = Vec::with_capacity(config.prompts_per_step * config.group_size);
        let mut contexts = Vec::with_capacity(config.prompts_per_step);
        for prompt in 0..config.prompts_per_step {
            let mut rng = prompt_stream(config.seed, step, prompt);
            let (context, mask) = env.sample_prompt(&mut rng);
            let group = sample_group(&policy, context, config.group_size, &mut rng);
            let rows: Vec<Vec<f64>> = group
                .iter()
                .map(|s| env.evaluate(context, s.action, &mask, &mut rng))
                .collect();
            matrices.push(RewardMatrix::with_mask(&rows, mask)?);
            samples.extend(group);
            contexts.push(context);
        }

        let adv = compute_advantages(
            &matrices,
            &config.method,
            &config.weighting,
            step,
            &config.advantage,
        )?;
        let batch = UpdateBatch {
            samples,
            advantages: adv.whitened.clone(),
            kl_contexts: contexts,
        };
        let mut loss = 0.0;
        for epoch in 0..config.inner_epochs {
            let (l, grad) = surrogate_loss_and_grad(&policy, &batch, &surrogate)?;
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Ok(RunMetrics {
                    steps,
                    failure: Some(format!("non-finite loss at step {step}, epoch {epoch}")),
                    final_policy: policy,
                });
            }
            loss = l;
            policy.descend(&grad, config.learning_rate);
        }

        let (channel_means, channel_satisfaction) = channel_summaries(env, &matrices, m);
        let (advantage_mean, advantage_std) = mean_std(&adv.whitened);
        let probs = policy.all_probs();
        steps.push(StepMetrics {
            step,
            coefficient: adv.coefficient,
            channel_means,
            channel_satisfaction,
            expected_channel: env.expected_channel_values(&probs),
            score_variance_mean: adv.score_variance_mean,
            advantage_mean,
            advantage_std,
            advantages: adv.whitened,
            probs,
            kl_to_reference: policy.kl_to_reference(config.kl_direction),
            loss,
        });
    }
    Ok(RunMetrics {
        steps,
        failure: None,
        final_policy: policy,
    })
}

fn channel_summaries(
    env: &EnvSpec,
    matrices: &[RewardMatrix],
    channels: usize,
) -> (Vec<f64>, Vec<Option<f64>>) {
    let mut sums = vec![0.0; channels];
    let mut counts = vec![0usize; channels];
    for mat in matrices {
        for j in (0..channels).filter(|&j| mat.is_active(j)) {
            for g in 0..mat.groups() {
                sums[j] += mat.get(g, j);
                counts[j] += 1;
            }
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    let satisfaction = env
        .channels
        .iter()
        .zip(&means)
        .map(|(def, &mean)| (def.kind == ChannelKind::Binary).then_some(mean))
        .collect();
    (means, satisfaction)
}
