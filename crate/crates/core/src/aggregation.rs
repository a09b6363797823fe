//! Per-generation advantage aggregators.
//!
//! Row aggregators take the active standard scores of one generation and
//! return a scalar: the arithmetic mean, the softmin (negative LogSumExp with
//! risk coefficient `k`), mean minus a variance penalty, or the hard minimum.
//! The summed-reward baselines operate on raw rewards instead.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RvpoError};
use crate::rewards::{
    group_sum_stats, standardize, z_normalize, RewardMatrix, WeightMode, WeightedChannelSpec,
    ZMatrix,
};
use crate::schedule::RiskSchedule;

/// Below this coefficient the softmin is evaluated as its `k -> 0` limit, the mean.
pub const SMALL_K: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMethod {
    /// Standardize the summed raw rewards.
    Grpo,
    /// Mean of per-channel standard scores.
    Gdpo,
    /// Softmin of standard scores with a scheduled risk coefficient.
    Rvpo(RiskSchedule),
    /// Mean minus scheduled `beta` times the inter-channel variance.
    RvpoExplicit(RiskSchedule),
    HardMin,
    /// Standardize a weighted sum of binary criterion scores.
    GrpoExplicitScalar(Vec<f64>),
}

impl AggregationMethod {
    /// Short identifier used in file names and reports.
    pub fn name(&self) -> &'static str {
        match self {
            AggregationMethod::Grpo => "grpo",
            AggregationMethod::Gdpo => "gdpo",
            AggregationMethod::Rvpo(_) => "rvpo",
            AggregationMethod::RvpoExplicit(_) => "rvpo-explicit",
            AggregationMethod::HardMin => "hardmin",
            AggregationMethod::GrpoExplicitScalar(_) => "grpo-explicit",
        }
    }

    pub fn schedule(&self) -> Option<&RiskSchedule> {
        match self {
            AggregationMethod::Rvpo(s) | AggregationMethod::RvpoExplicit(s) => Some(s),
            _ => None,
        }
    }

    /// The `k` or `beta` in effect at `step`; GDPO reports 0 and hard-min infinity.
    pub fn coefficient_at(&self, step: usize) -> Option<f64> {
        match self {
            AggregationMethod::Rvpo(s) | AggregationMethod::RvpoExplicit(s) => {
                Some(s.value_at(step))
            }
            AggregationMethod::Gdpo => Some(0.0),
            AggregationMethod::HardMin => Some(f64::INFINITY),
            _ => None,
        }
    }

    fn row_aggregator(&self, step: usize) -> Option<RowAggregator> {
        match self {
            AggregationMethod::Gdpo => Some(RowAggregator::Mean),
            AggregationMethod::HardMin => Some(RowAggregator::Min),
            AggregationMethod::Rvpo(s) => Some(RowAggregator::Softmin(s.value_at(step))),
            AggregationMethod::RvpoExplicit(s) => Some(RowAggregator::Explicit(s.value_at(step))),
            AggregationMethod::Grpo | AggregationMethod::GrpoExplicitScalar(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum RowAggregator {
    Mean,
    Softmin(f64),
    Explicit(f64),
    Min,
}

impl RowAggregator {
    fn apply(self, z: &[f64]) -> Result<f64> {
        match self {
            RowAggregator::Mean => aggregate_mean(z),
            RowAggregator::Softmin(k) => aggregate_softmin(z, k),
            RowAggregator::Explicit(beta) => aggregate_explicit(z, beta),
            RowAggregator::Min => aggregate_hardmin(z),
        }
    }
}

fn check_row(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(RvpoError::EmptyRow);
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(RvpoError::Usage(format!("score {i} is not finite ({})", z[i])));
    }
    Ok(())
}

/// Arithmetic mean; exact for constant rows.
fn mean(z: &[f64]) -> f64 {
    if let Some(&first) = z.first() {
        if z.iter().all(|&v| v == first) {
            return first;
        }
    }
    z.iter().sum::<f64>() / z.len() as f64
}

fn min(z: &[f64]) -> f64 {
    z.iter().copied().fold(f64::INFINITY, f64::min)
}

fn population_variance(z: &[f64]) -> f64 {
    let mu = mean(z);
    z.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / z.len() as f64
}

/// Arithmetic mean over active channels.
pub fn aggregate_mean(z: &[f64]) -> Result<f64> {
    check_row(z)?;
    Ok(mean(z))
}

/// `-(1/k) ln(mean_j exp(-k z_j))`.
///
/// `k = 0` (and anything below [`SMALL_K`]) is the mean, `k = inf` the minimum.
/// Evaluated as `min(z) - ln(1 + sum_j expm1(-k (z_j - min z)) / M) / k`, which never
/// exponentiates a positive argument.
pub fn aggregate_softmin(z: &[f64], k: f64) -> Result<f64> {
    check_row(z)?;
    if k.is_nan() || k < 0.0 {
        return Err(RvpoError::NegativeCoefficient(k));
    }
    if k < SMALL_K {
        return Ok(mean(z));
    }
    let lo = min(z);
    if k.is_infinite() {
        return Ok(lo);
    }
    let m = z.len() as f64;
    let shifted: f64 = z.iter().map(|&v| (-k * (v - lo)).exp_m1()).sum();
    let value = lo - (shifted / m).ln_1p() / k;
    // Rounding can leave the result an ulp above its analytic upper bounds.
    Ok(value.min(mean(z)).min(lo + m.ln() / k))
}

/// `mean(z) - beta * var(z)` with population variance over active channels.
pub fn aggregate_explicit(z: &[f64], beta: f64) -> Result<f64> {
    check_row(z)?;
    if beta.is_nan() || beta < 0.0 {
        return Err(RvpoError::NegativeCoefficient(beta));
    }
    if beta == 0.0 {
        return Ok(mean(z));
    }
    Ok(mean(z) - beta * population_variance(z))
}

pub fn aggregate_hardmin(z: &[f64]) -> Result<f64> {
    check_row(z)?;
    Ok(min(z))
}

/// Standardized sums of raw rewards over active channels.
pub fn grpo_advantages(rewards: &RewardMatrix, epsilon: f64) -> Result<Vec<f64>> {
    let (sums, _) = group_sum_stats(rewards, epsilon)?;
    Ok(standardize(&sums, epsilon).0)
}

/// Standardized weighted sums `sum_j w_j c_j` of binary criterion scores.
pub fn grpo_explicit_scalar_advantages(
    scores: &RewardMatrix,
    weights: &[f64],
    epsilon: f64,
) -> Result<Vec<f64>> {
    if weights.len() != scores.channels() {
        return Err(RvpoError::Shape(format!(
            "{} weights for {} channels",
            weights.len(),
            scores.channels()
        )));
    }
    if let Some((channel, &value)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w > 0.0))
    {
        return Err(RvpoError::InvalidWeight { channel, value });
    }
    let mut scalars = Vec::with_capacity(scores.groups());
    for g in 0..scores.groups() {
        let mut total = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            if !scores.is_active(j) {
                continue;
            }
            let c = scores.get(g, j);
            if c != 0.0 && c != 1.0 {
                return Err(RvpoError::NonBinaryScore {
                    generation: g,
                    channel: j,
                    value: c,
                });
            }
            total += w * c;
        }
        scalars.push(total);
    }
    let single = RewardMatrix::from_flat(scalars, scores.groups(), vec![true])?;
    grpo_advantages(&single, epsilon)
}

/// Quantities of the second-order expansion of the softmin around the row mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateDiagnostics {
    pub mean: f64,
    pub variance: f64,
    pub softmin: f64,
    /// `mean - (k/2) * variance`.
    pub taylor_value: f64,
    pub taylor_error: f64,
    pub deviations: Vec<f64>,
    /// Position (among active values) of the minimum, lowest index on ties.
    pub argmin: usize,
}

pub fn softmin_diagnostics(z: &[f64], k: f64) -> Result<AggregateDiagnostics> {
    let softmin = aggregate_softmin(z, k)?;
    let mu = mean(z);
    let deviations: Vec<f64> = z.iter().map(|v| v - mu).collect();
    let variance = deviations.iter().map(|d| d * d).sum::<f64>() / z.len() as f64;
    let taylor_value = if k.is_infinite() {
        f64::NEG_INFINITY
    } else {
        mu - 0.5 * k * variance
    };
    let taylor_error = if deviations.iter().all(|&d| d == 0.0) {
        0.0
    } else {
        (softmin - taylor_value).abs()
    };
    let argmin = z
        .iter()
        .enumerate()
        .fold(0, |best, (j, &v)| if v < z[best] { j } else { best });
    Ok(AggregateDiagnostics {
        mean: mu,
        variance,
        softmin,
        taylor_value,
        taylor_error,
        deviations,
        argmin,
    })
}

/// Advantages for one group together with the standard scores behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAggregate {
    pub advantages: Vec<f64>,
    /// Scores after any post-normalization weighting; diagnostic only for the GRPO paths.
    pub scores: ZMatrix,
}

impl GroupAggregate {
    /// Mean over generations of the inter-channel variance of the scores.
    pub fn mean_score_variance(&self) -> f64 {
        let g = self.scores.groups();
        (0..g)
            .map(|i| population_variance(&self.scores.active_row(i)))
            .sum::<f64>()
            / g as f64
    }
}

/// Aggregates one group under `method` resolved at `step`, with optional priority weights.
pub fn aggregate_group(
    method: &AggregationMethod,
    rewards: &RewardMatrix,
    weighting: &WeightedChannelSpec,
    step: usize,
    epsilon: f64,
) -> Result<GroupAggregate> {
    let weighted = match weighting.mode {
        WeightMode::PreNormalization => weighting.apply_to_rewards(rewards)?,
        _ => rewards.clone(),
    };
    let (z, _) = z_normalize(&weighted, epsilon)?;
    let scores = match weighting.mode {
        WeightMode::PostNormalization => weighting.apply_to_scores(&z)?,
        _ => z,
    };
    let advantages = match method {
        AggregationMethod::Grpo => {
            if weighting.mode == WeightMode::PostNormalization {
                return Err(RvpoError::Usage(
                    "post-normalization weighting is undefined for summed raw rewards".into(),
                ));
            }
            grpo_advantages(&weighted, epsilon)?
        }
        AggregationMethod::GrpoExplicitScalar(weights) => {
            if weighting.mode != WeightMode::Unweighted {
                return Err(RvpoError::Usage(
                    "the weighted-scalar baseline carries its own weights".into(),
                ));
            }
            grpo_explicit_scalar_advantages(rewards, weights, epsilon)?
        }
        other => {
            let row = other
                .row_aggregator(step)
                .expect("score-based method has a row aggregator");
            (0..scores.groups())
                .map(|g| row.apply(&scores.active_row(g)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(GroupAggregate { advantages, scores })
}

/// Per-generation advantages for one prompt's group, unweighted.
pub fn aggregate(
    method: &AggregationMethod,
    rewards: &RewardMatrix,
    step: usize,
    epsilon: f64,
) -> Result<Vec<f64>> {
    aggregate_group(
        method,
        rewards,
        &WeightedChannelSpec::unweighted(),
        step,
        epsilon,
    )
    .map(|a| a.advantages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::DEFAULT_EPSILON;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn mean_examples() {
        assert_eq!(aggregate_mean(&[2.0, -1.0]).unwrap(), 0.5);
        assert_eq!(aggregate_mean(&[0.3, 0.3]).unwrap(), 0.3);
        close(aggregate_mean(&[1.224745, -1.396963]).unwrap(), -0.086109, 1e-6);
        assert_eq!(aggregate_mean(&[]).unwrap_err(), RvpoError::EmptyRow);
    }

    #[test]
    fn softmin_examples() {
        assert_eq!(aggregate_softmin(&[0.5, 0.5], 3.7).unwrap(), 0.5);
        close(aggregate_softmin(&[2.0, -1.0], 1.0).unwrap(), -0.355440, 1e-6);
        close(
            aggregate_softmin(&[1.0, -1.0], 100.0).unwrap(),
            -1.0 + std::f64::consts::LN_2 / 100.0,
            1e-12,
        );
        close(aggregate_softmin(&[2.0, -1.0], 1e-9).unwrap(), 0.5, 1e-6);
        assert_eq!(aggregate_softmin(&[2.0, -1.0], 0.0).unwrap(), 0.5);
        assert_eq!(aggregate_softmin(&[2.0, -1.0], f64::INFINITY).unwrap(), -1.0);
    }

    #[test]
    fn softmin_rejects_negative_k_and_empty_rows() {
        assert!(matches!(
            aggregate_softmin(&[1.0], -0.1),
            Err(RvpoError::NegativeCoefficient(_))
        ));
        assert_eq!(aggregate_softmin(&[], 1.0).unwrap_err(), RvpoError::EmptyRow);
    }

    #[test]
    fn softmin_survives_extreme_coefficients() {
        let v = aggregate_softmin(&[-3.0, 3.0, 0.0], 1e4).unwrap();
        assert!(v.is_finite());
        close(v, -3.0, (3.0f64).ln() / 1e4 + 1e-12);
    }

    #[test]
    fn explicit_examples() {
        assert_eq!(aggregate_explicit(&[2.0, -1.0], 1.0).unwrap(), -1.75);
        let row = [0.4, -1.3, 2.2];
        assert_eq!(
            aggregate_explicit(&row, 0.0).unwrap(),
            aggregate_mean(&row).unwrap()
        );
        close(aggregate_explicit(&[0.7; 4], 5.0).unwrap(), 0.7, 1e-15);
        assert!(aggregate_explicit(&row, -1.0).is_err());
    }

    #[test]
    fn hardmin_examples() {
        assert_eq!(aggregate_hardmin(&[2.0, -1.0]).unwrap(), -1.0);
        assert_eq!(aggregate_hardmin(&[0.5]).unwrap(), 0.5);
        assert_eq!(aggregate_hardmin(&[1.224745, -1.396963]).unwrap(), -1.396963);
    }

    #[test]
    fn grpo_examples() {
        let m = RewardMatrix::from_rows(&[vec![1.0, 0.03], vec![0.5, 0.5], vec![0.0, 0.6]]).unwrap();
        let a = grpo_advantages(&m, 1e-15).unwrap();
        for (x, e) in a.iter().zip([0.782249, 0.629200, -1.411450]) {
            close(*x, e, 1e-6);
        }
        let same = RewardMatrix::from_rows(&vec![vec![0.2, 0.3]; 4]).unwrap();
        assert_eq!(grpo_advantages(&same, DEFAULT_EPSILON).unwrap(), vec![0.0; 4]);
        let pair = RewardMatrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let a = grpo_advantages(&pair, 1e-15).unwrap();
        close(a[0], 1.0, 1e-12);
        close(a[1], -1.0, 1e-12);
    }

    #[test]
    fn weighted_scalar_examples() {
        let c = RewardMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let a = grpo_explicit_scalar_advantages(&c, &[1.0, 0.3], 1e-15).unwrap();
        close(a[0], 1.0, 1e-12);
        close(a[1], -1.0, 1e-12);

        let tie = RewardMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(
            grpo_explicit_scalar_advantages(&tie, &[1.0, 0.3], DEFAULT_EPSILON).unwrap(),
            vec![0.0, 0.0]
        );

        let b = RewardMatrix::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]])
            .unwrap();
        assert_eq!(
            grpo_explicit_scalar_advantages(&b, &[1.0; 3], DEFAULT_EPSILON).unwrap(),
            grpo_advantages(&b, DEFAULT_EPSILON).unwrap()
        );

        let bad = RewardMatrix::from_rows(&[vec![0.5], vec![1.0]]).unwrap();
        assert!(matches!(
            grpo_explicit_scalar_advantages(&bad, &[1.0], DEFAULT_EPSILON),
            Err(RvpoError::NonBinaryScore { generation: 0, .. })
        ));
    }

    #[test]
    fn diagnostics_examples() {
        let d = softmin_diagnostics(&[0.1, -0.1], 1.0).unwrap();
        close(d.softmin, -(0.1f64.cosh().ln()), 1e-15);
        close(d.taylor_value, -0.005, 1e-15);
        close(d.taylor_error, 8.311178e-6, 1e-11);

        let same = softmin_diagnostics(&[0.4, 0.4, 0.4], 2.0).unwrap();
        assert_eq!(same.taylor_error, 0.0);

        let t = softmin_diagnostics(&[0.2, -0.1, -0.1], 1.0).unwrap();
        close(t.softmin, -0.009644208, 1e-9);
        close(t.taylor_value, -0.01, 1e-15);
        close(t.taylor_error, 3.557922e-4, 1e-9);
        assert_eq!(t.argmin, 1);
    }

    #[test]
    fn dispatch_over_a_group() {
        let m = RewardMatrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 0.6]]).unwrap();
        let gdpo = aggregate(&AggregationMethod::Gdpo, &m, 0, 1e-15).unwrap();
        for (x, e) in gdpo.iter().zip([-0.086128, 0.254000, -0.167872]) {
            close(*x, e, 1e-6);
        }
        let rvpo = aggregate(
            &AggregationMethod::Rvpo(RiskSchedule::Constant(1.0)),
            &m,
            0,
            1e-15,
        )
        .unwrap();
        for (x, e) in rvpo.iter().zip([-0.7740, 0.2221, -0.6456]) {
            close(*x, e, 1e-4);
        }
        let flat = RewardMatrix::from_rows(&vec![vec![0.3, 0.9]; 3]).unwrap();
        assert_eq!(
            aggregate(&AggregationMethod::HardMin, &flat, 0, DEFAULT_EPSILON).unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn zero_and_infinite_k_route_to_mean_and_min() {
        let m = RewardMatrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 0.6]]).unwrap();
        let gdpo = aggregate(&AggregationMethod::Gdpo, &m, 0, DEFAULT_EPSILON).unwrap();
        let k0 = aggregate(&AggregationMethod::Rvpo(RiskSchedule::Constant(0.0)), &m, 0, DEFAULT_EPSILON)
            .unwrap();
        assert_eq!(gdpo, k0);
        let hm = aggregate(&AggregationMethod::HardMin, &m, 0, DEFAULT_EPSILON).unwrap();
        let kinf = aggregate(
            &AggregationMethod::Rvpo(RiskSchedule::Constant(f64::INFINITY)),
            &m,
            0,
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert_eq!(hm, kinf);
    }

    #[test]
    fn grpo_rejects_post_weights() {
        let m = RewardMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let w = WeightedChannelSpec::post(vec![1.0, 0.5]);
        assert!(matches!(
            aggregate_group(&AggregationMethod::Grpo, &m, &w, 0, DEFAULT_EPSILON),
            Err(RvpoError::Usage(_))
        ));
    }

    fn row_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, 1..=17)
    }

    fn log_k() -> impl Strategy<Value = f64> {
        (-6.0f64..4.0).prop_map(|e| 10f64.powf(e))
    }

    proptest! {
        #[test]
        fn softmin_sandwich(z in row_strategy(), k in log_k()) {
            let a = aggregate_softmin(&z, k).unwrap();
            let lo = min(&z);
            let hi = mean(&z).min(lo + (z.len() as f64).ln() / k);
            prop_assert!(a >= lo - 1e-9);
            prop_assert!(a <= hi + 1e-9);
        }

        #[test]
        fn softmin_monotone_in_k(z in row_strategy(), k1 in log_k(), k2 in log_k()) {
            let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            prop_assert!(aggregate_softmin(&z, lo).unwrap() >= aggregate_softmin(&z, hi).unwrap());
        }

        #[test]
        fn translation_equivariance(z in row_strategy(), k in log_k(), c in -5.0f64..5.0, beta in 0.0f64..3.0) {
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let tol = 1e-9;
            prop_assert!((aggregate_softmin(&shifted, k).unwrap() - aggregate_softmin(&z, k).unwrap() - c).abs() <= tol);
            prop_assert!((aggregate_mean(&shifted).unwrap() - aggregate_mean(&z).unwrap() - c).abs() <= tol);
            prop_assert!((aggregate_hardmin(&shifted).unwrap() - aggregate_hardmin(&z).unwrap() - c).abs() <= tol);
            prop_assert!((aggregate_explicit(&shifted, beta).unwrap() - aggregate_explicit(&z, beta).unwrap() - c).abs() <= tol);
        }

        #[test]
        fn permutation_invariance(z in row_strategy(), k in log_k(), seed in any::<u64>()) {
            let mut p = z.clone();
            // deterministic shuffle via rotation and reversal
            let r = (seed as usize) % p.len();
            p.rotate_left(r);
            if seed % 2 == 0 { p.reverse(); }
            prop_assert!((aggregate_softmin(&p, k).unwrap() - aggregate_softmin(&z, k).unwrap()).abs() <= 1e-12);
            prop_assert!((aggregate_mean(&p).unwrap() - aggregate_mean(&z).unwrap()).abs() <= 1e-12);
            prop_assert_eq!(aggregate_hardmin(&p).unwrap(), aggregate_hardmin(&z).unwrap());
            prop_assert!((aggregate_explicit(&p, 0.7).unwrap() - aggregate_explicit(&z, 0.7).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn softmin_below_mean(z in row_strategy(), k in log_k()) {
            let a = aggregate_softmin(&z, k).unwrap();
            prop_assert!(a <= mean(&z) + 1e-12);
        }
    }
}
