//! Synthetic multi-objective environments.
//!
//! Each environment is a set of contexts (prompts) and discrete actions
//! (responses). An action profile fixes, per reward channel, either a mean
//! value (continuous channels, perturbed by clamped Gaussian noise) or a
//! satisfaction probability (binary channels).

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RvpoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    ConstraintNeglectBandit,
    ToolFormat,
    Rubric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDef {
    pub name: String,
    pub kind: ChannelKind,
    /// Priority weight in (0, 1].
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emission {
    Value(f64),
    Probability(f64),
}

impl Emission {
    /// Noise-free expected reward.
    pub fn mean(&self) -> f64 {
        match *self {
            Emission::Value(v) => v.clamp(0.0, 1.0),
            Emission::Probability(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionProfile {
    pub name: String,
    pub emissions: Vec<Emission>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub kind: EnvKind,
    pub context_count: usize,
    pub actions: Vec<ActionProfile>,
    pub channels: Vec<ChannelDef>,
    /// Bounds on the number of active channels per prompt (rubric environments).
    pub min_channels: usize,
    pub max_channels: usize,
    /// Gaussian noise on continuous channels.
    pub noise_std: f64,
}

impl EnvSpec {
    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.name == name)
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.weight).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RvpoError::Config(format!("env {}: {msg}", self.name)));
        if self.context_count == 0 {
            return bad("context_count must be positive".into());
        }
        if self.actions.is_empty() || self.channels.is_empty() {
            return bad("needs at least one action and one channel".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} is invalid", self.noise_std));
        }
        let m = self.channels.len();
        if self.kind == EnvKind::Rubric
            && (self.min_channels == 0 || self.min_channels > self.max_channels || self.max_channels > m)
        {
            return bad(format!(
                "channel bounds [{}, {}] invalid for {m} channels",
                self.min_channels, self.max_channels
            ));
        }
        for c in &self.channels {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return bad(format!("channel {} has weight {}", c.name, c.weight));
            }
        }
        for a in &self.actions {
            if a.emissions.len() != m {
                return bad(format!("action {} defines {} of {m} channels", a.name, a.emissions.len()));
            }
            for (e, c) in a.emissions.iter().zip(&self.channels) {
                match (c.kind, *e) {
                    (ChannelKind::Continuous, Emission::Value(v)) if v.is_finite() => {}
                    (ChannelKind::Binary, Emission::Probability(p)) if (0.0..=1.0).contains(&p) => {}
                    _ => {
                        return bad(format!(
                            "action {} has emission {e:?} for {:?} channel {}",
                            a.name, c.kind, c.name
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    /// Draws a context and the prompt's active-channel mask.
    pub fn sample_prompt<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<bool>) {
        let context = rng.random_range(0..self.context_count);
        let m = self.channels.len();
        let mask = match self.kind {
            EnvKind::Rubric => {
                let count = rng.random_range(self.min_channels..=self.max_channels);
                let mut mask = vec![false; m];
                for j in index::sample(rng, m, count) {
                    mask[j] = true;
                }
                mask
            }
            _ => vec![true; m],
        };
        (context, mask)
    }

    /// Rewards for one response; inactive channels are left at zero and draw no randomness.
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        _context: usize,
        action: usize,
        mask: &[bool],
        rng: &mut R,
    ) -> Vec<f64> {
        let profile = &self.actions[action];
        let noise = (self.noise_std > 0.0).then(|| Normal::new(0.0, self.noise_std).expect("valid std"));
        profile
            .emissions
            .iter()
            .zip(mask)
            .map(|(e, &on)| {
                if !on {
                    return 0.0;
                }
                match *e {
                    Emission::Value(v) => {
                        let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
                        (v + n).clamp(0.0, 1.0)
                    }
                    Emission::Probability(p) => {
                        if rng.random::<f64>() < p {
                            1.0
                        } else {
                            0.0
                        }
                    }
                }
            })
            .collect()
    }

    /// Noise-free expected reward per channel under `probs[context][action]`,
    /// averaged uniformly over contexts.
    pub fn expected_channel_values(&self, probs: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.channels.len()];
        for row in probs {
            for (a, p) in row.iter().enumerate() {
                for (j, e) in self.actions[a].emissions.iter().enumerate() {
                    out[j] += p * e.mean();
                }
            }
        }
        let c = probs.len() as f64;
        out.iter_mut().for_each(|v| *v /= c);
        out
    }

    pub fn preset(name: &str) -> Option<EnvSpec> {
        match name {
            "bandit" => Some(bandit()),
            "tool" => Some(tool_format()),
            "rubric" => Some(rubric()),
            _ => None,
        }
    }
}

fn continuous(name: &str) -> ChannelDef {
    ChannelDef {
        name: name.into(),
        kind: ChannelKind::Continuous,
        weight: 1.0,
    }
}

/// One context; an exploiter that maximizes the channel sum against a balanced
/// response that maximizes the channel minimum, plus a dominated response.
pub fn bandit() -> EnvSpec {
    let act = |name: &str, a: f64, b: f64| ActionProfile {
        name: name.into(),
        emissions: vec![Emission::Value(a), Emission::Value(b)],
    };
    EnvSpec {
        name: "bandit".into(),
        kind: EnvKind::ConstraintNeglectBandit,
        context_count: 1,
        actions: vec![
            act("exploit", 1.0, 0.03),
            act("balanced", 0.5, 0.5),
            act("bad", 0.0, 0.0),
        ],
        channels: vec![continuous("r1"), continuous("r2")],
        min_channels: 2,
        max_channels: 2,
        noise_std: 0.05,
    }
}

/// Continuous execution correctness crossed with a binary format constraint.
pub fn tool_format() -> EnvSpec {
    let mut actions = Vec::new();
    for c in [0.9, 0.6, 0.3] {
        for (tag, p) in [("format", 1.0), ("noformat", 0.0)] {
            actions.push(ActionProfile {
                name: format!("c{c}_{tag}"),
                emissions: vec![Emission::Value(c), Emission::Probability(p)],
            });
        }
    }
    EnvSpec {
        name: "tool".into(),
        kind: EnvKind::ToolFormat,
        context_count: 4,
        actions,
        channels: vec![
            continuous("correctness"),
            ChannelDef {
                name: "format".into(),
                kind: ChannelKind::Binary,
                weight: 1.0,
            },
        ],
        min_channels: 2,
        max_channels: 2,
        noise_std: 0.05,
    }
}

pub const RUBRIC_CRITERIA: usize = 17;
const RUBRIC_WEIGHTS: [f64; 3] = [1.0, 0.7, 0.3];

/// Whether rubric criterion `j` is a hard (bottleneck) criterion.
pub fn rubric_is_hard(j: usize) -> bool {
    j % 4 == 3
}

/// Seventeen binary criteria, 5 to 17 active per prompt.
pub fn rubric() -> EnvSpec {
    let channels = (0..RUBRIC_CRITERIA)
        .map(|j| ChannelDef {
            name: format!("criterion_{j:02}"),
            kind: ChannelKind::Binary,
            weight: RUBRIC_WEIGHTS[j % RUBRIC_WEIGHTS.len()],
        })
        .collect();
    let profile = |name: &str, easy: f64, hard: f64| ActionProfile {
        name: name.into(),
        emissions: (0..RUBRIC_CRITERIA)
            .map(|j| Emission::Probability(if rubric_is_hard(j) { hard } else { easy }))
            .collect(),
    };
    EnvSpec {
        name: "rubric".into(),
        kind: EnvKind::Rubric,
        context_count: 8,
        actions: vec![
            profile("exploiter", 0.95, 0.05),
            profile("generalist", 0.55, 0.55),
            profile("weak", 0.2, 0.2),
        ],
        channels,
        min_channels: 5,
        max_channels: 17,
        noise_std: 0.0,
    }
}

/// The bandit, tool, and rubric presets.
pub fn default_envs() -> [EnvSpec; 3] {
    [bandit(), tool_format(), rubric()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn presets_validate() {
        for env in default_envs() {
            env.validate().unwrap();
        }
        let b = bandit();
        assert_eq!((b.action_count(), b.channel_count()), (3, 2));
        let t = tool_format();
        assert_eq!(t.channels[1].kind, ChannelKind::Binary);
        assert_eq!(t.action_count(), 6);
        let weights = rubric().weights();
        assert!(weights.contains(&1.0) && weights.contains(&0.3));
    }

    #[test]
    fn bandit_mask_is_full() {
        let env = bandit();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(env.sample_prompt(&mut rng), (0, vec![true, true]));
        }
    }

    #[test]
    fn rubric_mask_cardinality() {
        let env = rubric();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..2000 {
            let (c, mask) = env.sample_prompt(&mut rng);
            assert!(c < 8);
            let n = mask.iter().filter(|&&a| a).count();
            assert!((5..=17).contains(&n));
            seen.insert(n);
        }
        assert_eq!(seen.len(), 13);

        let mut fixed = rubric();
        fixed.min_channels = 8;
        fixed.max_channels = 8;
        for _ in 0..100 {
            let (_, mask) = fixed.sample_prompt(&mut rng);
            assert_eq!(mask.iter().filter(|&&a| a).count(), 8);
        }
    }

    #[test]
    fn noiseless_bandit_rewards() {
        let mut env = bandit();
        env.noise_std = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask = [true, true];
        assert_eq!(env.evaluate(0, 0, &mask, &mut rng), vec![1.0, 0.03]);
        assert_eq!(env.evaluate(0, 1, &mask, &mut rng), vec![0.5, 0.5]);

        let sums: Vec<f64> = env.actions.iter().map(|a| a.emissions.iter().map(Emission::mean).sum()).collect();
        let mins: Vec<f64> = env
            .actions
            .iter()
            .map(|a| a.emissions.iter().map(Emission::mean).fold(f64::INFINITY, f64::min))
            .collect();
        assert!(sums[0] > sums[1] && sums[1] > sums[2]);
        assert!(mins[1] > mins[0] && mins[0] > mins[2]);
    }

    #[test]
    fn absent_format_is_never_satisfied() {
        let env = tool_format();
        let a = env.action_index("c0.9_noformat").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            assert_eq!(env.evaluate(0, a, &[true, true], &mut rng)[1], 0.0);
        }
    }

    #[test]
    fn channel_kind_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mut env in default_envs() {
            env.noise_std = 0.5;
            for _ in 0..300 {
                let (c, mask) = env.sample_prompt(&mut rng);
                let a = rng.random_range(0..env.action_count());
                let r = env.evaluate(c, a, &mask, &mut rng);
                for ((v, def), on) in r.iter().zip(&env.channels).zip(&mask) {
                    if !on {
                        assert_eq!(*v, 0.0);
                        continue;
                    }
                    match def.kind {
                        ChannelKind::Binary => assert!(*v == 0.0 || *v == 1.0),
                        ChannelKind::Continuous => assert!((0.0..=1.0).contains(v)),
                    }
                }
            }
        }
    }

    #[test]
    fn identical_seeds_give_identical_streams() {
        let env = rubric();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|i| {
                    let (c, mask) = env.sample_prompt(&mut rng);
                    env.evaluate(c, i % 3, &mask, &mut rng)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut env = tool_format();
        env.actions[0].emissions[1] = Emission::Value(0.5);
        assert!(env.validate().is_err());
        let mut env = rubric();
        env.min_channels = 18;
        assert!(env.validate().is_err());
        let mut env = bandit();
        env.actions[1].emissions.pop();
        assert!(env.validate().is_err());
    }

    #[test]
    fn expected_values_under_a_policy() {
        let env = tool_format();
        let probs = vec![vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0]; 4];
        let e = env.expected_channel_values(&probs);
        assert!((e[0] - 0.9).abs() < 1e-12);
        assert!((e[1] - 0.5).abs() < 1e-12);
    }
}
