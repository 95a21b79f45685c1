//! Sampling and verifying one rollout group.

use crate::envs::{verify, Instance, TaskSpec};
use crate::error::Result;
use crate::policy::{PolicyParams, SampleOpts};
use crate::seeds;
use crate::types::{ContextId, GroupKind, Origin, RolloutGroup, TokenSeq, TrajectoryRecord};

/// Draws `n` responses conditioned on `conditioning` from the behavior
/// snapshot and scores each against the instance's verifier. Member `j` uses
/// the seed derived from `(seed, j)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_group(
    behavior: &PolicyParams,
    conditioning: &TokenSeq,
    context_id: ContextId,
    group_kind: GroupKind,
    task: &TaskSpec,
    instance: &Instance,
    n: usize,
    opts: &SampleOpts,
    seed: u64,
) -> Result<RolloutGroup> {
    let ctx = behavior.encode(conditioning.tokens())?;
    let members = (0..n)
        .map(|j| {
            let (response, behavior_logprobs) = behavior.sample_from(&ctx, opts, seeds::derive(seed, &[j as u64]));
            let verdict = verify(task, &instance.prompt, &instance.hidden_target, &response);
            TrajectoryRecord {
                context_id,
                response,
                behavior_logprobs,
                reward: verdict.reward,
                critique: verdict.critique,
                origin: Origin::OnPolicy,
            }
        })
        .collect();
    Ok(RolloutGroup {
        instance: context_id.instance(),
        prompt: conditioning.clone(),
        members,
        group_kind,
    })
}
