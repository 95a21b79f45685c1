//! Group-relative advantages and the token-level clipped surrogate.
//!
//! The surrogate engine in this module is shared by the plain GRPO baseline,
//! the mixed on/off-policy objective and the joint generation+refinement
//! batch. Every objective is a sum over tokens normalized by the total token
//! count of the step, and gradients are accumulated through the current
//! policy's log-probabilities only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GolfError, Result};
use crate::par;
use crate::policy::{GradAccumulator, PolicyParams};
use crate::types::{ContextId, GroupKind, RolloutGroup, TrajectoryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// Mean-centred and divided by the population standard deviation.
    Grpo,
    /// Mean-centred only.
    DrGrpo,
}

impl fmt::Display for AdvantageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdvantageMode::Grpo => "grpo",
            AdvantageMode::DrGrpo => "dr_grpo",
        })
    }
}

impl FromStr for AdvantageMode {
    type Err = GolfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(AdvantageMode::Grpo),
            "dr_grpo" => Ok(AdvantageMode::DrGrpo),
            other => Err(GolfError::Config(format!("unknown advantage mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub values: Vec<f64>,
    pub mode: AdvantageMode,
}

pub fn group_advantages(rewards: &[f64], mode: AdvantageMode) -> Result<AdvantageSet> {
    if rewards.len() < 2 {
        return Err(GolfError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let mut values: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    if mode == AdvantageMode::Grpo {
        let std = (values.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
        if std == 0.0 {
            values.iter_mut().for_each(|a| *a = 0.0);
        } else {
            values.iter_mut().for_each(|a| *a /= std);
        }
    }
    Ok(AdvantageSet { values, mode })
}

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clip_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// `∂ clip_term / ∂ ratio`; the unclipped branch wins ties.
fn clip_term_slope(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

/// Bounded reshaping `u / (u + λ)` applied to off-policy ratios.
pub fn reshape_ratio(u: f64, lambda: f64) -> f64 {
    u / (u + lambda)
}

fn reshape_slope(u: f64, lambda: f64) -> f64 {
    lambda / ((u + lambda) * (u + lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateOpts {
    pub epsilon: f64,
    /// Reshaping constant for off-policy ratios.
    pub lambda: f64,
    /// Wrap reshaped off-policy ratios in the clip as well (the literal
    /// displayed objective). Off by default.
    pub clip_off_policy: bool,
}

impl Default for SurrogateOpts {
    fn default() -> Self {
        SurrogateOpts {
            epsilon: 0.2,
            lambda: 0.1,
            clip_off_policy: false,
        }
    }
}

/// A rollout group together with the advantages it is trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGroup {
    pub group: RolloutGroup,
    pub advantages: Vec<f64>,
}

/// Objective value split by contribution, each already divided by `tokens`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveParts {
    pub total: f64,
    /// On-policy members of generation groups.
    pub on: f64,
    /// Injected off-policy members.
    pub off: f64,
    /// Members of refinement groups.
    pub refine: f64,
    pub tokens: usize,
    pub off_ratio_min: Option<f64>,
    pub off_ratio_max: Option<f64>,
}

struct GroupResult {
    grad: GradAccumulator,
    on: f64,
    off: f64,
    refine: f64,
    off_min: Option<f64>,
    off_max: Option<f64>,
}

fn validate_member(index: usize, m: &TrajectoryRecord) -> Result<()> {
    if m.behavior_logprobs.len() != m.response.len() || m.response.is_empty() {
        return Err(GolfError::MissingBehavior(index));
    }
    if m.is_off_policy() && !matches!(m.context_id, ContextId::Refinement(_)) {
        return Err(GolfError::BadProvenance(index));
    }
    Ok(())
}

fn group_surrogate(params: &PolicyParams, bg: &BatchGroup, opts: &SurrogateOpts, inv_z: f64) -> Result<GroupResult> {
    let dims = params.dims();
    let mut res = GroupResult {
        grad: GradAccumulator::zeros(dims),
        on: 0.0,
        off: 0.0,
        refine: 0.0,
        off_min: None,
        off_max: None,
    };
    // Zero-advantage members contribute exactly nothing.
    if bg.advantages.iter().all(|&a| a == 0.0) {
        return Ok(res);
    }
    let ctx = params.encode(bg.group.prompt.tokens())?;
    let mut dh = vec![0.0; dims.d_h];
    for (m, &adv) in bg.group.members.iter().zip(&bg.advantages) {
        if adv == 0.0 {
            continue;
        }
        let trace = params.trace(&ctx, m.response.tokens())?;
        let mut weights = Vec::with_capacity(m.response.len());
        let mut value = 0.0;
        for (&lp, &old) in trace.logprobs().iter().zip(&m.behavior_logprobs) {
            let ratio = (lp - old).exp();
            // d ratio / d logπ = ratio
            let (v, slope) = if m.is_off_policy() {
                res.off_min = Some(res.off_min.map_or(ratio, |x: f64| x.min(ratio)));
                res.off_max = Some(res.off_max.map_or(ratio, |x: f64| x.max(ratio)));
                let f = reshape_ratio(ratio, opts.lambda);
                let df = reshape_slope(ratio, opts.lambda);
                if opts.clip_off_policy {
                    (clip_term(f, adv, opts.epsilon), clip_term_slope(f, adv, opts.epsilon) * df)
                } else {
                    (f * adv, adv * df)
                }
            } else {
                (clip_term(ratio, adv, opts.epsilon), clip_term_slope(ratio, adv, opts.epsilon))
            };
            value += v;
            weights.push(slope * ratio * inv_z);
        }
        params.backprop_response(&trace, &weights, res.grad.as_mut_slice(), &mut dh);
        let value = value * inv_z;
        match (bg.group.group_kind, m.is_off_policy()) {
            (GroupKind::Refinement, _) => res.refine += value,
            (GroupKind::Generation, true) => res.off += value,
            (GroupKind::Generation, false) => res.on += value,
        }
    }
    params.backprop_context(&ctx, &dh, res.grad.as_mut_slice());
    Ok(res)
}

/// Evaluates the token-normalized surrogate over every group of a step and
/// adds its gradient into `acc`.
pub fn surrogate(params: &PolicyParams, groups: &[BatchGroup], opts: &SurrogateOpts, acc: &mut GradAccumulator) -> Result<ObjectiveParts> {
    if groups.is_empty() {
        return Err(GolfError::EmptyBatch);
    }
    let mut index = 0;
    for bg in groups {
        if bg.advantages.len() != bg.group.members.len() {
            return Err(GolfError::BadShape(format!(
                "{} advantages for {} members",
                bg.advantages.len(),
                bg.group.members.len()
            )));
        }
        for m in &bg.group.members {
            validate_member(index, m)?;
            index += 1;
        }
    }
    let tokens: usize = groups.iter().map(|bg| bg.group.token_count()).sum();
    let inv_z = 1.0 / tokens as f64;
    let results = par::map_ordered(groups, |bg| group_surrogate(params, bg, opts, inv_z));
    let mut parts = ObjectiveParts {
        tokens,
        ..Default::default()
    };
    for r in results {
        let r = r?;
        acc.add_scaled(&r.grad, 1.0);
        parts.on += r.on;
        parts.off += r.off;
        parts.refine += r.refine;
        parts.off_ratio_min = match (parts.off_ratio_min, r.off_min) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        parts.off_ratio_max = match (parts.off_ratio_max, r.off_max) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
    }
    parts.total = parts.on + parts.off + parts.refine;
    Ok(parts)
}

/// Clipped surrogate over plain rollout groups, advantages normalized per group.
pub fn grpo_objective(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    epsilon: f64,
    mode: AdvantageMode,
    acc: &mut GradAccumulator,
) -> Result<f64> {
    let opts = SurrogateOpts {
        epsilon,
        ..Default::default()
    };
    Ok(grpo_objective_parts(params, groups, &opts, mode, acc)?.total)
}

pub fn grpo_objective_parts(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    opts: &SurrogateOpts,
    mode: AdvantageMode,
    acc: &mut GradAccumulator,
) -> Result<ObjectiveParts> {
    let batch = groups
        .iter()
        .map(|g| {
            Ok(BatchGroup {
                advantages: group_advantages(&g.rewards(), mode)?.values,
                group: g.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    surrogate(params, &batch, opts, acc)
}
