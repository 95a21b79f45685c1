//! Per-step training measurements and evaluation estimators.

use serde::{Deserialize, Serialize};

use crate::error::{GolfError, Result};
use crate::policy::PolicyParams;
use crate::types::{is_zero_reward_group, RolloutGroup};

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    /// Mean reward of the generation groups before injection.
    pub mean_reward: f64,
    pub zero_reward_ratio: f64,
    /// Mean over generation trajectories of the summed per-token entropy.
    pub entropy: f64,
    /// Fraction of generation groups that received an injected refinement.
    pub injection_rate: f64,
    pub on_loss: f64,
    pub off_loss: f64,
    pub ref_loss: f64,
}

impl MetricsRecord {
    pub fn is_valid(&self) -> bool {
        let finite = [
            self.mean_reward,
            self.zero_reward_ratio,
            self.entropy,
            self.injection_rate,
            self.on_loss,
            self.off_loss,
            self.ref_loss,
        ]
        .iter()
        .all(|x| x.is_finite());
        finite
            && (0.0..=1.0).contains(&self.zero_reward_ratio)
            && (0.0..=1.0).contains(&self.injection_rate)
            && self.entropy >= 0.0
    }
}

/// Fraction of groups whose members all scored 0.
pub fn zero_reward_ratio(groups: &[RolloutGroup]) -> Result<f64> {
    if groups.is_empty() {
        return Err(GolfError::EmptyBatch);
    }
    let zero = groups.iter().filter(|g| is_zero_reward_group(g)).count();
    Ok(zero as f64 / groups.len() as f64)
}

/// Mean over on-policy trajectories of the summed next-token entropies,
/// each scored under its group's conditioning prompt.
pub fn batch_entropy(params: &PolicyParams, groups: &[RolloutGroup]) -> Result<f64> {
    let per_group = crate::par::map_ordered(groups, |g| -> Result<(f64, usize)> {
        let on: Vec<_> = g.members.iter().filter(|m| !m.is_off_policy()).collect();
        if on.is_empty() {
            return Ok((0.0, 0));
        }
        let ctx = params.encode(g.prompt.tokens())?;
        let mut sum = 0.0;
        for m in &on {
            let trace = params.trace(&ctx, m.response.tokens())?;
            sum += trace.entropies().iter().sum::<f64>();
        }
        Ok((sum, on.len()))
    });
    let (mut total, mut count) = (0.0, 0usize);
    for r in per_group {
        let (s, c) = r?;
        total += s;
        count += c;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(total / count as f64)
}

/// Unbiased pass@k estimate `1 − C(n−c, k) / C(n, k)`.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n || c > n {
        return Err(GolfError::BadK { n, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    // C(n−c, k) / C(n, k) = Π_{i=0}^{k−1} (n−c−i) / (n−i)
    let ratio: f64 = (0..k).map(|i| (n - c - i) as f64 / (n - i) as f64).product();
    Ok(1.0 - ratio)
}

pub fn avg_at_n(rewards: &[f64]) -> f64 {
    if rewards.is_empty() {
        return 0.0;
    }
    rewards.iter().sum::<f64>() / rewards.len() as f64
}
