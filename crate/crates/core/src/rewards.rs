//! Reward matrices, per-channel standardization, and priority weighting.
//!
//! A [`RewardMatrix`] holds the raw rewards of one prompt's generation group,
//! stored row-major by generation, together with the mask of channels that
//! apply to the prompt. Inactive channels never enter any statistic.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RvpoError};

/// Default divisor guard added to standard deviations.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// G×M raw rewards for one prompt plus its active-channel mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardMatrix {
    values: Vec<f64>,
    groups: usize,
    channels: usize,
    active: Vec<bool>,
}

impl RewardMatrix {
    /// Builds a matrix with every channel active.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.first().map_or(0, Vec::len);
        Self::with_mask(rows, vec![true; channels])
    }

    pub fn with_mask(rows: &[Vec<f64>], active: Vec<bool>) -> Result<Self> {
        let channels = active.len();
        let mut values = Vec::with_capacity(rows.len() * channels);
        for (g, row) in rows.iter().enumerate() {
            if row.len() != channels {
                return Err(RvpoError::Shape(format!(
                    "generation {g} has {} channels, expected {channels}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(values, rows.len(), active)
    }

    /// Builds a matrix from row-major values; `active.len()` is the channel count.
    pub fn from_flat(values: Vec<f64>, groups: usize, active: Vec<bool>) -> Result<Self> {
        let channels = active.len();
        if channels == 0 {
            return Err(RvpoError::NoChannels);
        }
        if groups < 2 {
            return Err(RvpoError::GroupTooSmall(groups));
        }
        if values.len() != groups * channels {
            return Err(RvpoError::Shape(format!(
                "{} values for a {groups}x{channels} matrix",
                values.len()
            )));
        }
        if !active.iter().any(|&a| a) {
            return Err(RvpoError::NoActiveChannels);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RvpoError::NonFinite {
                generation: i / channels,
                channel: i % channels,
                value: values[i],
            });
        }
        Ok(Self {
            values,
            groups,
            channels,
            active,
        })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn is_active(&self, channel: usize) -> bool {
        self.active[channel]
    }

    pub fn get(&self, generation: usize, channel: usize) -> f64 {
        self.values[generation * self.channels + channel]
    }

    pub fn row(&self, generation: usize) -> &[f64] {
        let start = generation * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values of one channel across the group.
    pub fn column(&self, channel: usize) -> Vec<f64> {
        (0..self.groups).map(|g| self.get(g, channel)).collect()
    }

    fn active_channels(&self) -> impl Iterator<Item = usize> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(j, &a)| a.then_some(j))
    }

    fn map_channels(&self, scale: impl Fn(usize) -> f64) -> Self {
        let mut out = self.clone();
        for g in 0..self.groups {
            for j in 0..self.channels {
                out.values[g * self.channels + j] *= scale(j);
            }
        }
        out
    }
}

/// Statistics used to standardize one group.
///
/// Per-channel entries are `None` for inactive channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub per_channel_mean: Vec<Option<f64>>,
    pub per_channel_std: Vec<Option<f64>>,
    pub sum_mean: f64,
    pub sum_std: f64,
    pub epsilon: f64,
}

/// Standardized scores for one group. Inactive entries hold no value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZMatrix {
    values: Vec<f64>,
    groups: usize,
    channels: usize,
    active: Vec<bool>,
}

impl ZMatrix {
    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn get(&self, generation: usize, channel: usize) -> Option<f64> {
        self.active[channel].then(|| self.values[generation * self.channels + channel])
    }

    /// Active scores of one generation, in channel order.
    pub fn active_row(&self, generation: usize) -> Vec<f64> {
        let start = generation * self.channels;
        self.values[start..start + self.channels]
            .iter()
            .zip(&self.active)
            .filter_map(|(&z, &a)| a.then_some(z))
            .collect()
    }
}

/// Population mean and standard deviation (two-pass).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standard scores `(v - mean) / (std + eps)`; a constant input maps to exact zeros.
pub(crate) fn standardize(values: &[f64], epsilon: f64) -> (Vec<f64>, f64, f64) {
    let (mean, std) = mean_std(values);
    let constant = values.iter().all(|&v| v == values[0]);
    let z = if constant {
        vec![0.0; values.len()]
    } else {
        values.iter().map(|v| (v - mean) / (std + epsilon)).collect()
    };
    (z, mean, std)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(RvpoError::InvalidEpsilon(epsilon))
    }
}

fn active_sums(rewards: &RewardMatrix) -> Vec<f64> {
    (0..rewards.groups)
        .map(|g| rewards.active_channels().map(|j| rewards.get(g, j)).sum())
        .collect()
}

/// Standardizes every active channel across the group with population statistics.
pub fn z_normalize(rewards: &RewardMatrix, epsilon: f64) -> Result<(ZMatrix, GroupStats)> {
    check_epsilon(epsilon)?;
    let (g_count, m_count) = (rewards.groups, rewards.channels);
    let mut values = vec![0.0; g_count * m_count];
    let mut per_channel_mean = vec![None; m_count];
    let mut per_channel_std = vec![None; m_count];
    for j in rewards.active_channels() {
        let (z, mean, std) = standardize(&rewards.column(j), epsilon);
        for (g, zg) in z.into_iter().enumerate() {
            values[g * m_count + j] = zg;
        }
        per_channel_mean[j] = Some(mean);
        per_channel_std[j] = Some(std);
    }
    let (sum_mean, sum_std) = mean_std(&active_sums(rewards));
    let stats = GroupStats {
        per_channel_mean,
        per_channel_std,
        sum_mean,
        sum_std,
        epsilon,
    };
    let z = ZMatrix {
        values,
        groups: g_count,
        channels: m_count,
        active: rewards.active.clone(),
    };
    Ok((z, stats))
}

/// Per-generation sums over active channels and their group statistics.
pub fn group_sum_stats(rewards: &RewardMatrix, epsilon: f64) -> Result<(Vec<f64>, GroupStats)> {
    let (_, stats) = z_normalize(rewards, epsilon)?;
    Ok((active_sums(rewards), stats))
}

/// Where priority weights enter the computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Scale raw rewards before standardization.
    PreNormalization,
    /// Scale standard scores after standardization.
    PostNormalization,
    #[default]
    Unweighted,
}

/// Per-channel priority weights and where they are applied.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightedChannelSpec {
    pub weights: Vec<f64>,
    pub mode: WeightMode,
}

impl WeightedChannelSpec {
    pub fn unweighted() -> Self {
        Self::default()
    }

    pub fn pre(weights: Vec<f64>) -> Self {
        Self {
            weights,
            mode: WeightMode::PreNormalization,
        }
    }

    pub fn post(weights: Vec<f64>) -> Self {
        Self {
            weights,
            mode: WeightMode::PostNormalization,
        }
    }

    fn check(&self, channels: usize) -> Result<()> {
        if self.mode == WeightMode::Unweighted {
            return Ok(());
        }
        if self.weights.len() != channels {
            return Err(RvpoError::Shape(format!(
                "{} weights for {channels} channels",
                self.weights.len()
            )));
        }
        if let Some((channel, &value)) = self
            .weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(RvpoError::InvalidWeight { channel, value });
        }
        Ok(())
    }

    /// Applies pre-normalization weights to raw rewards (`R_j = w_j * c_j`).
    pub fn apply_to_rewards(&self, rewards: &RewardMatrix) -> Result<RewardMatrix> {
        self.check(rewards.channels)?;
        match self.mode {
            WeightMode::Unweighted => Ok(rewards.clone()),
            WeightMode::PreNormalization => Ok(rewards.map_channels(|j| self.weights[j])),
            WeightMode::PostNormalization => Err(RvpoError::Usage(
                "post-normalization weights apply to standard scores, not raw rewards".into(),
            )),
        }
    }

    /// Applies post-normalization weights to standard scores (`Z'_j = w_j * Z_j`).
    pub fn apply_to_scores(&self, scores: &ZMatrix) -> Result<ZMatrix> {
        self.check(scores.channels)?;
        match self.mode {
            WeightMode::Unweighted => Ok(scores.clone()),
            WeightMode::PostNormalization => {
                let mut out = scores.clone();
                for g in 0..scores.groups {
                    for j in 0..scores.channels {
                        out.values[g * scores.channels + j] *= self.weights[j];
                    }
                }
                Ok(out)
            }
            WeightMode::PreNormalization => Err(RvpoError::Usage(
                "pre-normalization weights apply to raw rewards, not standard scores".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(col: &[f64]) -> RewardMatrix {
        let rows: Vec<Vec<f64>> = col.iter().map(|&v| vec![v]).collect();
        RewardMatrix::from_rows(&rows).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn zscore_of_four_levels() {
        let (z, stats) = z_normalize(&single(&[1.0, 2.0, 3.0, 4.0]), 1e-15).unwrap();
        let expected = [-1.341641, -0.447214, 0.447214, 1.341641];
        for (g, e) in expected.iter().enumerate() {
            close(z.get(g, 0).unwrap(), *e, 1e-6);
        }
        close(stats.per_channel_mean[0].unwrap(), 2.5, 1e-12);
        close(stats.per_channel_std[0].unwrap(), 1.118034, 1e-6);
    }

    #[test]
    fn constant_channel_is_exactly_zero() {
        let (z, _) = z_normalize(&single(&[0.7, 0.7, 0.7]), DEFAULT_EPSILON).unwrap();
        assert_eq!(z.active_row(0), vec![0.0]);
        assert_eq!(z.active_row(2), vec![0.0]);
    }

    #[test]
    fn pair_group() {
        let (z, stats) = z_normalize(&single(&[1.0, 0.0]), 1e-15).unwrap();
        close(z.get(0, 0).unwrap(), 1.0, 1e-12);
        close(z.get(1, 0).unwrap(), -1.0, 1e-12);
        close(stats.per_channel_std[0].unwrap(), 0.5, 1e-15);
    }

    #[test]
    fn sums_and_stats() {
        let m = RewardMatrix::from_rows(&[vec![1.0, 0.03], vec![0.5, 0.5], vec![0.0, 0.6]]).unwrap();
        let (sums, stats) = group_sum_stats(&m, DEFAULT_EPSILON).unwrap();
        close(sums[0], 1.03, 1e-12);
        close(sums[2], 0.6, 1e-12);
        close(stats.sum_mean, 0.876667, 1e-6);
        close(stats.sum_std, 0.196016, 1e-6);
    }

    #[test]
    fn identical_generations_have_zero_sum_std() {
        let m = RewardMatrix::from_rows(&[vec![0.2, 0.4], vec![0.2, 0.4]]).unwrap();
        let (_, stats) = group_sum_stats(&m, DEFAULT_EPSILON).unwrap();
        assert_eq!(stats.sum_std, 0.0);
    }

    #[test]
    fn single_active_channel_sums_equal_that_channel() {
        let m = RewardMatrix::with_mask(&[vec![0.3, 9.0], vec![0.8, -4.0]], vec![true, false])
            .unwrap();
        let (sums, stats) = group_sum_stats(&m, DEFAULT_EPSILON).unwrap();
        assert_eq!(sums, vec![0.3, 0.8]);
        assert_eq!(stats.per_channel_mean[1], None);
        assert_eq!(stats.per_channel_std[1], None);
    }

    #[test]
    fn validation_errors() {
        assert_eq!(
            RewardMatrix::from_rows(&[vec![1.0]]).unwrap_err(),
            RvpoError::GroupTooSmall(1)
        );
        match RewardMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, f64::NAN]]).unwrap_err() {
            RvpoError::NonFinite {
                generation,
                channel,
                ..
            } => assert_eq!((generation, channel), (1, 1)),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(
            RewardMatrix::with_mask(&[vec![1.0], vec![2.0]], vec![false]).unwrap_err(),
            RvpoError::NoActiveChannels
        );
        assert!(matches!(
            RewardMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err(),
            RvpoError::Shape(_)
        ));
        assert!(matches!(
            z_normalize(&single(&[1.0, 2.0]), 0.0).unwrap_err(),
            RvpoError::InvalidEpsilon(_)
        ));
    }

    #[test]
    fn pre_weights_on_binary_criteria() {
        let m = RewardMatrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]]).unwrap();
        let w = WeightedChannelSpec::pre(vec![1.0, 0.3, 1.0]);
        let out = w.apply_to_rewards(&m).unwrap();
        assert_eq!(out.row(0), &[1.0, 0.3, 0.0]);
        assert_eq!(out.active(), m.active());
    }

    #[test]
    fn unit_weights_are_identity() {
        let m = RewardMatrix::from_rows(&[vec![0.1, 0.9], vec![0.4, 0.2]]).unwrap();
        let out = WeightedChannelSpec::pre(vec![1.0, 1.0]).apply_to_rewards(&m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn post_weights_scale_scores() {
        let m = RewardMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (z, _) = z_normalize(&m, DEFAULT_EPSILON).unwrap();
        let w = WeightedChannelSpec::post(vec![0.5, 0.5]);
        let zw = w.apply_to_scores(&z).unwrap();
        assert_eq!(zw.active_row(0), vec![0.5 * z.active_row(0)[0], 0.5 * z.active_row(0)[1]]);
    }

    #[test]
    fn weighting_mode_mismatch_is_usage_error() {
        let m = RewardMatrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let (z, _) = z_normalize(&m, DEFAULT_EPSILON).unwrap();
        assert!(matches!(
            WeightedChannelSpec::post(vec![1.0]).apply_to_rewards(&m),
            Err(RvpoError::Usage(_))
        ));
        assert!(matches!(
            WeightedChannelSpec::pre(vec![1.0]).apply_to_scores(&z),
            Err(RvpoError::Usage(_))
        ));
        assert!(matches!(
            WeightedChannelSpec::pre(vec![0.0]).apply_to_rewards(&m),
            Err(RvpoError::InvalidWeight { channel: 0, .. })
        ));
    }

    #[test]
    fn masked_entries_do_not_move_statistics() {
        let rows = [vec![0.1, 5.0, 0.9], vec![0.6, -2.0, 0.2], vec![0.3, 1.0, 0.4]];
        let mask = vec![true, false, true];
        let a = RewardMatrix::with_mask(&rows, mask.clone()).unwrap();
        let mut perturbed = rows.clone();
        perturbed[0][1] = 1e6;
        perturbed[2][1] = -3.5;
        let b = RewardMatrix::with_mask(&perturbed, mask).unwrap();
        let (za, sa) = z_normalize(&a, DEFAULT_EPSILON).unwrap();
        let (zb, sb) = z_normalize(&b, DEFAULT_EPSILON).unwrap();
        assert_eq!(za, zb);
        assert_eq!(sa, sb);
        assert_eq!(za.get(0, 1), None);
    }
}
