//! Property battery for the aggregators, advantage pipeline, and surrogate gradient.
//!
//! Each property reports its sample count and the worst slack (tolerance minus
//! observed error; negative means violated). The softmin under test is
//! injectable so that a deliberately broken implementation can be checked
//! against the battery.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvpo_core::pipeline::compute_advantages;
use rvpo_core::trainer::{finite_diff_check, KlDirection, PolicyTable, Sample, SurrogateOptions, UpdateBatch};
use rvpo_core::{
    aggregate_explicit, aggregate_softmin, grpo_advantages, AdvantageOptions, AggregationMethod,
    RewardMatrix, RiskSchedule, WeightedChannelSpec,
};

pub type SoftminFn = fn(&[f64], f64) -> f64;

/// The library softmin, with errors mapped to NaN.
pub fn library_softmin(z: &[f64], k: f64) -> f64 {
    aggregate_softmin(z, k).unwrap_or(f64::NAN)
}

/// Direct `-(1/k) ln(mean exp(-k z))` without shifting by the minimum.
pub fn unshifted_softmin(z: &[f64], k: f64) -> f64 {
    let m = z.iter().map(|&v| (-k * v).exp()).sum::<f64>() / z.len() as f64;
    -m.ln() / k
}

#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: &'static str,
    pub samples: usize,
    pub worst_slack: f64,
    pub counterexample: Option<String>,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<32} samples={:<7} worst_slack={:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.samples,
            self.worst_slack
        )?;
        if let Some(c) = &self.counterexample {
            write!(f, "\n     counterexample: {c}")?;
        }
        Ok(())
    }
}

/// Running worst slack for one property; keeps the first violating input.
struct Tracker {
    name: &'static str,
    samples: usize,
    worst: f64,
    counterexample: Option<String>,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            samples: 0,
            worst: f64::INFINITY,
            counterexample: None,
        }
    }

    fn record(&mut self, tolerance: f64, error: f64, input: impl FnOnce() -> String) {
        self.samples += 1;
        let slack = if error.is_nan() { f64::NEG_INFINITY } else { tolerance - error };
        if slack < self.worst {
            self.worst = slack;
        }
        if slack < 0.0 && self.counterexample.is_none() {
            self.counterexample = Some(format!("{} (error {error:.3e}, tolerance {tolerance:.3e})", input()));
        }
    }

    fn finish(self) -> PropertyResult {
        PropertyResult {
            name: self.name,
            samples: self.samples,
            worst_slack: self.worst,
            counterexample: self.counterexample,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    pub rows: usize,
    pub pipeline_batches: usize,
    pub gradient_batches: usize,
    pub softmin: SoftminFn,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            rows: 10_000,
            pipeline_batches: 1_000,
            gradient_batches: 50,
            softmin: library_softmin,
        }
    }
}

pub const LIMIT_ZERO: &str = "limit_k_to_zero";
pub const LIMIT_INFINITY: &str = "limit_k_to_infinity";

fn mean(z: &[f64]) -> f64 {
    z.iter().sum::<f64>() / z.len() as f64
}

fn min(z: &[f64]) -> f64 {
    z.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Rows of length 1..=17 with entries uniform in [-3, 3].
pub fn random_rows(seed: u64, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let m = rng.random_range(1..=17);
            (0..m).map(|_| rng.random_range(-3.0..=3.0)).collect()
        })
        .collect()
}

/// 20 log-spaced coefficients from 1e-3 to 1e3.
pub fn k_grid() -> Vec<f64> {
    (0..20).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 19.0)).collect()
}

pub fn check_limits(rows: &[Vec<f64>], softmin: SoftminFn) -> [PropertyResult; 2] {
    let mut zero = Tracker::new(LIMIT_ZERO);
    let mut inf = Tracker::new(LIMIT_INFINITY);
    let inf_tol = 17f64.ln() / 1e4 + 1e-9;
    for z in rows {
        zero.record(1e-6, (softmin(z, 1e-8) - mean(z)).abs(), || format!("z={z:?}, k=1e-8"));
        inf.record(inf_tol, (softmin(z, 1e4) - min(z)).abs(), || format!("z={z:?}, k=1e4"));
    }
    [zero.finish(), inf.finish()]
}

pub fn check_sandwich_and_monotonicity(rows: &[Vec<f64>], softmin: SoftminFn) -> [PropertyResult; 2] {
    const ROUNDING: f64 = 1e-12;
    let grid = k_grid();
    let mut sandwich = Tracker::new("sandwich_bounds");
    let mut mono = Tracker::new("monotone_in_k");
    for z in rows {
        let (lo, mu) = (min(z), mean(z));
        let ln_m = (z.len() as f64).ln();
        let mut prev: Option<f64> = None;
        for &k in &grid {
            let s = softmin(z, k);
            let upper = mu.min(lo + ln_m / k);
            let violation = (lo - s).max(s - upper);
            sandwich.record(ROUNDING, violation.max(0.0) + if s.is_finite() { 0.0 } else { f64::NAN }, || {
                format!("z={z:?}, k={k:e}, softmin={s}")
            });
            if let Some(p) = prev {
                let rise = s - p;
                mono.record(ROUNDING, if s.is_finite() { rise.max(0.0) } else { f64::NAN }, || {
                    format!("z={z:?}, k={k:e}, softmin={s}, previous={p}")
                });
            }
            prev = Some(s);
        }
    }
    [sandwich.finish(), mono.finish()]
}

/// Rows rescaled about their mean so that `k * max|delta| <= 0.5`; returns `(z, k)`.
pub fn taylor_cases(seed: u64, count: usize) -> Vec<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rows(seed ^ 0x7a7a, count)
        .into_iter()
        .map(|z| {
            let k = 10f64.powf(rng.random_range(-1.0..=1.0));
            let mu = mean(&z);
            let spread = z.iter().map(|v| (v - mu).abs()).fold(0.0, f64::max);
            let target = 0.5 * rng.random_range(0.05..=1.0);
            let scale = if spread > 0.0 { (target / (k * spread)).min(1.0) } else { 1.0 };
            (z.iter().map(|v| mu + (v - mu) * scale).collect(), k)
        })
        .collect()
}

pub fn check_taylor(cases: &[(Vec<f64>, f64)], softmin: SoftminFn) -> [PropertyResult; 2] {
    let mut bound = Tracker::new("taylor_bound");
    for (z, k) in cases {
        let mu = mean(z);
        let var = z.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / z.len() as f64;
        let spread = z.iter().map(|v| (v - mu).abs()).fold(0.0, f64::max);
        let err = (softmin(z, *k) - (mu - 0.5 * k * var)).abs();
        bound.record(k * k * spread.powi(3), err, || format!("z={z:?}, k={k}"));
    }
    let mut worked = Tracker::new("taylor_worked_case");
    let err = (softmin(&[0.1, -0.1], 1.0) - (0.0 - 0.5 * 0.01)).abs();
    let expected = 8.311178353469733e-6;
    worked.record(0.1, (err - expected).abs() / expected, || "z=[0.1, -0.1], k=1".into());
    [bound.finish(), worked.finish()]
}

pub fn check_equivariance(rows: &[Vec<f64>], softmin: SoftminFn, seed: u64) -> [PropertyResult; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut translation = Tracker::new("translation_equivariance");
    let mut permutation = Tracker::new("permutation_invariance");
    for z in rows {
        let k = 10f64.powf(rng.random_range(-2.0..=2.0));
        let c = rng.random_range(-5.0..=5.0);
        let base = softmin(z, k);
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let tol = 1e-9 * (1.0 + c.abs() + base.abs());
        translation.record(tol, (softmin(&shifted, k) - base - c).abs(), || {
            format!("z={z:?}, k={k}, c={c}")
        });
        let mut perm = z.clone();
        perm.reverse();
        if perm.len() > 2 {
            perm.swap(0, 1);
        }
        permutation.record(1e-12 * (1.0 + base.abs()), (softmin(&perm, k) - base).abs(), || {
            format!("z={z:?}, k={k}")
        });
    }
    [translation.finish(), permutation.finish()]
}

/// Known values from an independent high-precision evaluation.
pub fn check_exact_values(softmin: SoftminFn) -> PropertyResult {
    let mut t = Tracker::new("exact_values");
    t.record(1e-6, (softmin(&[2.0, -1.0], 1.0) - -0.35544017101379677).abs(), || {
        "softmin([2, -1], 1)".into()
    });
    t.record(1e-6, (softmin(&[1.0, -1.0], 100.0) - -0.9930685281944005).abs(), || {
        "softmin([1, -1], 100)".into()
    });
    let explicit = aggregate_explicit(&[2.0, -1.0], 1.0).unwrap_or(f64::NAN);
    t.record(1e-6, (explicit - -1.75).abs(), || "explicit([2, -1], 1)".into());
    let m = RewardMatrix::from_rows(&[vec![1.0, 0.03], vec![0.5, 0.5], vec![0.0, 0.6]]).expect("valid");
    let grpo = grpo_advantages(&m, 1e-6).unwrap_or_default();
    let want = [0.7822455867034144, 0.6291975371310072, -1.4114431238344216];
    for (i, w) in want.iter().enumerate() {
        t.record(1e-6, (grpo.get(i).copied().unwrap_or(f64::NAN) - w).abs(), || {
            format!("grpo example generation {i}")
        });
    }
    t.finish()
}

/// One prompt of a pipeline test batch.
#[derive(Debug, Clone)]
pub struct PromptCase {
    pub rows: Vec<Vec<f64>>,
    pub active: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct PipelineCase {
    pub prompts: Vec<PromptCase>,
    pub method: AggregationMethod,
}

/// Random batches: 1-4 prompts, 2-8 generations, 17 channels with 5-17 active,
/// binary or continuous rewards, and a random method.
pub fn pipeline_cases(seed: u64, count: usize) -> Vec<PipelineCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let groups = rng.random_range(2..=8);
            let prompts = (0..rng.random_range(1..=4))
                .map(|_| {
                    let active_count = rng.random_range(5..=17);
                    let idx = rand::seq::index::sample(&mut rng, 17, active_count);
                    let mut active = vec![false; 17];
                    for j in idx.iter() {
                        active[j] = true;
                    }
                    let binary = rng.random_bool(0.5);
                    let rows = (0..groups)
                        .map(|_| {
                            (0..17)
                                .map(|_| {
                                    if binary {
                                        f64::from(u8::from(rng.random_bool(0.5)))
                                    } else {
                                        rng.random_range(-1.0..=2.0)
                                    }
                                })
                                .collect()
                        })
                        .collect();
                    PromptCase { rows, active }
                })
                .collect();
            let method = match rng.random_range(0..6) {
                0 => AggregationMethod::Grpo,
                1 => AggregationMethod::Gdpo,
                2 => AggregationMethod::HardMin,
                3 => AggregationMethod::RvpoExplicit(RiskSchedule::Constant(rng.random_range(0.0..=2.0))),
                4 => AggregationMethod::Rvpo(RiskSchedule::Constant(f64::INFINITY)),
                _ => AggregationMethod::Rvpo(RiskSchedule::Constant(10f64.powf(rng.random_range(-2.0..=2.0)))),
            };
            PipelineCase { prompts, method }
        })
        .collect()
}

fn reference_standardize(v: &[f64], eps: f64) -> Vec<f64> {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n).sqrt();
    v.iter().map(|x| (x - mu) / (sd + eps)).collect()
}

/// Straight-line advantages: Z per active channel, row aggregation, global whitening.
pub fn reference_advantages(case: &PipelineCase, eps: f64) -> Vec<f64> {
    let mut pooled = Vec::new();
    for p in &case.prompts {
        let g = p.rows.len();
        let active: Vec<usize> = (0..p.active.len()).filter(|&j| p.active[j]).collect();
        if let AggregationMethod::Grpo = case.method {
            let sums: Vec<f64> = p.rows.iter().map(|r| active.iter().map(|&j| r[j]).sum()).collect();
            pooled.extend(reference_standardize(&sums, eps));
            continue;
        }
        let mut z = vec![Vec::with_capacity(active.len()); g];
        for &j in &active {
            let col: Vec<f64> = p.rows.iter().map(|r| r[j]).collect();
            for (row, v) in z.iter_mut().zip(reference_standardize(&col, eps)) {
                row.push(v);
            }
        }
        for row in &z {
            let mu = mean(row);
            let lo = min(row);
            let value = match &case.method {
                AggregationMethod::Gdpo => mu,
                AggregationMethod::HardMin => lo,
                AggregationMethod::RvpoExplicit(s) => {
                    let beta = s.value_at(0);
                    mu - beta * row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / row.len() as f64
                }
                AggregationMethod::Rvpo(s) => {
                    let k = s.value_at(0);
                    if k.is_infinite() {
                        lo
                    } else {
                        let m = row.iter().map(|v| (-k * (v - lo)).exp()).sum::<f64>() / row.len() as f64;
                        lo - m.ln() / k
                    }
                }
                _ => unreachable!("pipeline cases use score-based methods or grpo"),
            };
            pooled.push(value);
        }
    }
    reference_standardize(&pooled, eps)
}

pub fn check_pipeline(cases: &[PipelineCase]) -> PropertyResult {
    let mut t = Tracker::new("pipeline_reference_equivalence");
    let opts = AdvantageOptions::default();
    for case in cases {
        let batch: Vec<RewardMatrix> = case
            .prompts
            .iter()
            .map(|p| RewardMatrix::with_mask(&p.rows, p.active.clone()).expect("valid case"))
            .collect();
        let got = compute_advantages(&batch, &case.method, &WeightedChannelSpec::unweighted(), 0, &opts);
        let want = reference_advantages(case, opts.epsilon);
        let err = match got {
            Ok(b) if b.whitened.len() == want.len() => b
                .whitened
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            _ => f64::NAN,
        };
        t.record(1e-9, err, || format!("method={}, prompts={:?}", case.method.name(), case.prompts));
    }
    t.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientRegime {
    Unclipped,
    Clipped,
    PureKl,
}

#[derive(Debug, Clone)]
pub struct GradientCase {
    pub regime: GradientRegime,
    pub policy: PolicyTable,
    pub batch: UpdateBatch,
    pub options: SurrogateOptions,
}

/// Seeded surrogate batches cycling through the three regimes. Probability
/// ratios stay at least 0.09 away from the clip boundaries, so central
/// differences never straddle a kink.
pub fn gradient_cases(seed: u64, count: usize) -> Vec<GradientCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let regime = [GradientRegime::Unclipped, GradientRegime::Clipped, GradientRegime::PureKl][i % 3];
            let contexts = rng.random_range(1..=4);
            let actions = rng.random_range(2..=5);
            let logits = (0..contexts * actions).map(|_| rng.random_range(-2.0..=2.0)).collect();
            let reference_logits = (0..contexts * actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let mut policy = PolicyTable::from_logits(contexts, actions, reference_logits);
            policy.set_logits(logits);
            let n = rng.random_range(4..=24);
            let mut samples = Vec::with_capacity(n);
            let mut advantages = Vec::with_capacity(n);
            for _ in 0..n {
                let context = rng.random_range(0..contexts);
                let action = rng.random_range(0..actions);
                let p = policy.probs(context)[action];
                let ratio = match regime {
                    GradientRegime::Clipped if rng.random_bool(0.5) => rng.random_range(1.3..=2.0),
                    GradientRegime::Clipped => rng.random_range(0.4..=0.7),
                    _ => rng.random_range(0.9..=1.1),
                };
                samples.push(Sample {
                    context,
                    action,
                    behavior_prob: p / ratio,
                });
                advantages.push(match regime {
                    GradientRegime::PureKl => 0.0,
                    _ => rng.random_range(-2.0..=2.0),
                });
            }
            let options = SurrogateOptions {
                clip_epsilon: 0.2,
                kl_coefficient: match regime {
                    GradientRegime::PureKl => rng.random_range(0.1..=1.0),
                    _ => rng.random_range(0.0..=0.1),
                },
                kl_direction: if rng.random_bool(0.5) { KlDirection::Reverse } else { KlDirection::Forward },
            };
            let kl_contexts = (0..contexts).collect();
            GradientCase {
                regime,
                policy,
                batch: UpdateBatch {
                    samples,
                    advantages,
                    kl_contexts,
                },
                options,
            }
        })
        .collect()
}

pub fn check_gradients(cases: &[GradientCase]) -> PropertyResult {
    let mut t = Tracker::new("gradient_finite_difference");
    for case in cases {
        let err = finite_diff_check(&case.policy, &case.batch, &case.options, 1e-5).unwrap_or(f64::NAN);
        t.record(1e-4, err, || format!("regime={:?}, logits={:?}", case.regime, case.policy.logits()));
    }
    t.finish()
}

pub fn run_battery(opts: &VerifyOptions) -> Vec<PropertyResult> {
    let rows = random_rows(opts.seed, opts.rows);
    let mut out = Vec::new();
    out.extend(check_limits(&rows, opts.softmin));
    out.extend(check_sandwich_and_monotonicity(&rows, opts.softmin));
    out.extend(check_taylor(&taylor_cases(opts.seed, opts.rows), opts.softmin));
    out.extend(check_equivariance(&rows, opts.softmin, opts.seed ^ 0x51));
    out.push(check_exact_values(opts.softmin));
    out.push(check_pipeline(&pipeline_cases(opts.seed, opts.pipeline_batches)));
    out.push(check_gradients(&gradient_cases(opts.seed, opts.gradient_batches)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyOptions {
        VerifyOptions {
            rows: 500,
            pipeline_batches: 50,
            gradient_batches: 12,
            ..Default::default()
        }
    }

    #[test]
    fn library_passes_everything() {
        for r in run_battery(&small()) {
            assert!(r.passed(), "{r}");
            assert!(r.samples > 0);
        }
    }

    #[test]
    fn unshifted_softmin_breaks_the_large_k_limit() {
        let results = run_battery(&VerifyOptions {
            softmin: unshifted_softmin,
            ..small()
        });
        let inf = results.iter().find(|r| r.name == LIMIT_INFINITY).unwrap();
        assert!(!inf.passed());
        assert!(inf.counterexample.as_ref().unwrap().contains("k=1e4"));
    }

    #[test]
    fn gradient_cases_cover_regimes() {
        let cases = gradient_cases(3, 9);
        for regime in [GradientRegime::Unclipped, GradientRegime::Clipped, GradientRegime::PureKl] {
            assert_eq!(cases.iter().filter(|c| c.regime == regime).count(), 3);
        }
    }
}
