//! Group-level feedback: refinement contexts built from a group's failures,
//! adaptive injection of successful refinements into the generation group,
//! the mixed on/off-policy objective and the joint generation+refinement
//! batch.
//!
//! A step for one prompt instance `x` goes:
//!
//! 1. failures of the generation group are aggregated into a refinement
//!    context `x ‖ SEP ‖ fail ‖ SEP ‖ critique ‖ ...`;
//! 2. a refinement group is sampled under that context and verified;
//! 3. if the generation group's mean reward is below `tau`, one successful
//!    refinement replaces one failed member and is flagged off-policy;
//! 4. the augmented group (mean-centred advantages) and the refinement group
//!    (its own mean-centred advantages) are trained as one batch.
//!
//! Off-policy members are scored with `π_θ(y | x) / π_old(y | context)`,
//! reshaped by `u / (u + λ)` and left unclipped.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{FeedbackMode, Instance, TaskSpec};
use crate::error::{GolfError, Result};
pub use crate::grpo::reshape_ratio;
use crate::grpo::{group_advantages, surrogate, AdvantageMode, BatchGroup, ObjectiveParts, SurrogateOpts};
use crate::policy::{GradAccumulator, PolicyParams, SampleOpts};
use crate::rollout::sample_group;
use crate::types::{ContextId, CritiqueText, Failure, GroupKind, Origin, RolloutGroup, TokenSeq, TrajectoryRecord};
use crate::vocab::{EOS, SEP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementContext {
    pub base_prompt: TokenSeq,
    pub entries: Vec<Failure>,
    pub rendered: TokenSeq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionDecision {
    pub triggered: bool,
    pub replaced_index: Option<usize>,
    pub injected: Option<TrajectoryRecord>,
}

impl InjectionDecision {
    fn skipped() -> Self {
        InjectionDecision {
            triggered: false,
            replaced_index: None,
            injected: None,
        }
    }
}

/// How the injected refinement is picked from the successful set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionPick {
    Uniform,
    /// Highest reward, earliest member on ties.
    HighestReward,
}

/// When injection is attempted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    /// Only when the generation group's mean reward is below `tau`.
    Adaptive,
    /// Whenever a successful refinement exists, taking the best one.
    Always,
    Never,
}

impl fmt::Display for InjectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InjectionMode::Adaptive => "adaptive",
            InjectionMode::Always => "always",
            InjectionMode::Never => "never",
        })
    }
}

impl FromStr for InjectionMode {
    type Err = GolfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(InjectionMode::Adaptive),
            "always" => Ok(InjectionMode::Always),
            "never" => Ok(InjectionMode::Never),
            other => Err(GolfError::Config(format!("unknown injection mode {other:?}"))),
        }
    }
}

/// Failed response tokens without the trailing EOS.
fn strip_eos(tokens: &[u32]) -> &[u32] {
    match tokens.split_last() {
        Some((&EOS, rest)) => rest,
        _ => tokens,
    }
}

pub fn aggregate_refinement_context(
    prompt: &TokenSeq,
    failures: &[Failure],
    mode: FeedbackMode,
    cap: usize,
    max_len: usize,
    rng_seed: u64,
) -> Result<RefinementContext> {
    if failures.is_empty() {
        return Err(GolfError::NoFailures);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let keep = match mode {
        FeedbackMode::Mixed | FeedbackMode::Intra => cap.max(1),
        FeedbackMode::External | FeedbackMode::Simple => 1,
    };
    let mut picked: Vec<usize> = if failures.len() > keep {
        index::sample(&mut rng, failures.len(), keep).into_vec()
    } else {
        (0..failures.len()).collect()
    };
    picked.sort_unstable();

    let entries: Vec<Failure> = picked
        .into_iter()
        .map(|i| {
            let f = &failures[i];
            let critique = match mode {
                FeedbackMode::Mixed | FeedbackMode::External => f.critique.clone(),
                FeedbackMode::Intra | FeedbackMode::Simple => CritiqueText::failure_marker(),
            };
            Failure {
                response: f.response.clone(),
                critique,
            }
        })
        .collect();

    let mut rendered = prompt.tokens().to_vec();
    for e in &entries {
        rendered.push(SEP);
        rendered.extend_from_slice(strip_eos(e.response.tokens()));
        rendered.push(SEP);
        rendered.extend_from_slice(e.critique.tokens.tokens());
    }
    if rendered.len() > max_len {
        return Err(GolfError::ContextOverflow {
            len: rendered.len(),
            max: max_len,
        });
    }
    Ok(RefinementContext {
        base_prompt: prompt.clone(),
        entries,
        rendered: TokenSeq::from_vec(rendered),
    })
}

/// Samples `n` refinements under the rendered context; members record their
/// behavior log-probabilities under that context.
#[allow(clippy::too_many_arguments)]
pub fn sample_refinement_group(
    behavior: &PolicyParams,
    ctx: &RefinementContext,
    instance_id: u64,
    task: &TaskSpec,
    instance: &Instance,
    n: usize,
    opts: &SampleOpts,
    seed: u64,
) -> Result<RolloutGroup> {
    sample_group(
        behavior,
        &ctx.rendered,
        ContextId::Refinement(instance_id),
        GroupKind::Refinement,
        task,
        instance,
        n,
        opts,
        seed,
    )
}

pub fn successful_refinements(refinement: &RolloutGroup) -> Vec<TrajectoryRecord> {
    refinement.members.iter().filter(|m| m.reward == 1.0).cloned().collect()
}

/// Strict threshold test on the generation group's mean reward.
pub fn should_inject(mean_reward: f64, tau: f64) -> bool {
    mean_reward < tau
}

/// Replaces one uniformly chosen reward-0 member of `generation` with a
/// successful refinement flagged as off-policy.
pub fn inject(generation: &RolloutGroup, successes: &[TrajectoryRecord], rng_seed: u64) -> Result<(RolloutGroup, InjectionDecision)> {
    inject_with(generation, successes, InjectionPick::Uniform, rng_seed)
}

pub fn inject_with(
    generation: &RolloutGroup,
    successes: &[TrajectoryRecord],
    pick: InjectionPick,
    rng_seed: u64,
) -> Result<(RolloutGroup, InjectionDecision)> {
    if successes.is_empty() {
        return Ok((generation.clone(), InjectionDecision::skipped()));
    }
    let slots: Vec<usize> = generation
        .members
        .iter()
        .enumerate()
        .filter(|(_, m)| m.reward == 0.0)
        .map(|(i, _)| i)
        .collect();
    if slots.is_empty() {
        return Err(GolfError::NoFailureSlot);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let chosen = match pick {
        InjectionPick::Uniform => rng.gen_range(0..successes.len()),
        InjectionPick::HighestReward => successes
            .iter()
            .enumerate()
            .fold(0, |best, (i, m)| if m.reward > successes[best].reward { i } else { best }),
    };
    let slot = slots[rng.gen_range(0..slots.len())];
    let source = &successes[chosen];
    if !matches!(source.context_id, ContextId::Refinement(_)) {
        return Err(GolfError::BadProvenance(chosen));
    }
    let mut injected = source.clone();
    injected.origin = Origin::OffPolicyInjected;
    let mut augmented = generation.clone();
    augmented.members[slot] = injected.clone();
    Ok((
        augmented,
        InjectionDecision {
            triggered: true,
            replaced_index: Some(slot),
            injected: Some(injected),
        },
    ))
}

/// Mixed objective over augmented generation groups, advantages mean-centred
/// within each augmented group.
pub fn mixed_objective(
    params: &PolicyParams,
    augmented: &[RolloutGroup],
    opts: &SurrogateOpts,
    acc: &mut GradAccumulator,
) -> Result<ObjectiveParts> {
    let batch = augmented
        .iter()
        .map(|g| {
            Ok(BatchGroup {
                advantages: group_advantages(&g.rewards(), AdvantageMode::DrGrpo)?.values,
                group: g.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    surrogate(params, &batch, opts, acc)
}

/// Augmented generation group plus (optionally) its refinement group, each
/// carrying separately normalized advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub groups: Vec<BatchGroup>,
}

pub fn joint_batch(augmented: &RolloutGroup, refinement: Option<&RolloutGroup>) -> Result<TrainingBatch> {
    let mut groups = vec![BatchGroup {
        advantages: group_advantages(&augmented.rewards(), AdvantageMode::DrGrpo)?.values,
        group: augmented.clone(),
    }];
    if let Some(r) = refinement {
        if r.instance != augmented.instance {
            return Err(GolfError::PromptMismatch(augmented.instance, r.instance));
        }
        groups.push(BatchGroup {
            advantages: group_advantages(&r.rewards(), AdvantageMode::DrGrpo)?.values,
            group: r.clone(),
        });
    }
    Ok(TrainingBatch { groups })
}

/// One token-normalized objective and gradient over every batch of a step.
pub fn batch_objective(
    params: &PolicyParams,
    batches: &[TrainingBatch],
    opts: &SurrogateOpts,
    acc: &mut GradAccumulator,
) -> Result<ObjectiveParts> {
    let flat: Vec<BatchGroup> = batches.iter().flat_map(|b| b.groups.iter().cloned()).collect();
    surrogate(params, &flat, opts, acc)
}
