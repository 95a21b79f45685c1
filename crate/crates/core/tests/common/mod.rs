//! Shared oracles for the integration tests: random tiny instances and
//! central finite differences.
#![allow(dead_code)]

use golf_rl::golf::TrainingBatch;
use golf_rl::grpo::{group_advantages, AdvantageMode, BatchGroup};
use golf_rl::policy::{logprobs, GradAccumulator, PolicyDims, PolicyParams};
use golf_rl::sft::SftExample;
use golf_rl::types::{ContextId, CritiqueText, GroupKind, Origin, RolloutGroup, TokenSeq, TrajectoryRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-5;
/// Denominator floor for the relative error. Below it, central differences at
/// `FD_STEP` are dominated by rounding (about 1e-10 absolute here), so small
/// coordinates are held to an absolute error of `FD_TOLERANCE * FD_FLOOR`.
pub const FD_FLOOR: f64 = 1e-4;

/// 10·4 + 6·4 + 6·6 + 6 + 10·6 + 10 = 176 parameters.
pub fn tiny_dims() -> PolicyDims {
    PolicyDims { vocab: 10, d_emb: 4, d_h: 6 }
}

pub fn seq(rng: &mut ChaCha8Rng, vocab: usize, min: usize, max: usize) -> TokenSeq {
    let n = rng.gen_range(min..=max);
    TokenSeq::from_vec((0..n).map(|_| rng.gen_range(0..vocab as u32)).collect())
}

/// Parameters drawn at a larger scale than the default init so that every
/// tensor carries a non-trivial gradient.
pub fn random_params(dims: PolicyDims, rng: &mut ChaCha8Rng) -> PolicyParams {
    let data = (0..dims.param_count()).map(|_| rng.gen_range(-0.8..0.8)).collect();
    PolicyParams::from_vec(dims, data).unwrap()
}

/// Moves every coordinate by a small random amount so ratios are not all 1
/// but stay well inside the clip band.
pub fn perturb(p: &PolicyParams, scale: f64, rng: &mut ChaCha8Rng) -> PolicyParams {
    let data = p.as_slice().iter().map(|x| x + rng.gen_range(-scale..scale)).collect();
    PolicyParams::from_vec(p.dims(), data).unwrap()
}

fn binary_rewards(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let r: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
        if r.contains(&0.0) && r.contains(&1.0) {
            return r;
        }
    }
}

fn on_policy(behavior: &PolicyParams, id: ContextId, ctx: &TokenSeq, response: TokenSeq, reward: f64) -> TrajectoryRecord {
    TrajectoryRecord {
        context_id: id,
        behavior_logprobs: logprobs(behavior, ctx, &response).unwrap(),
        response,
        reward,
        critique: CritiqueText::failure_marker(),
        origin: Origin::OnPolicy,
    }
}

/// A generation group whose behavior log-probabilities come from `behavior`.
pub fn random_group(behavior: &PolicyParams, instance: u64, n: usize, rng: &mut ChaCha8Rng) -> RolloutGroup {
    let v = behavior.dims().vocab;
    let prompt = seq(rng, v, 1, 4);
    let rewards = binary_rewards(rng, n);
    let members = rewards
        .iter()
        .map(|&r| {
            let resp = seq(rng, v, 1, 4);
            on_policy(behavior, ContextId::Prompt(instance), &prompt, resp, r)
        })
        .collect();
    RolloutGroup {
        instance,
        prompt,
        members,
        group_kind: GroupKind::Generation,
    }
}

/// A refinement group sampled under a longer context, plus an augmented
/// generation group into which one of its successes was injected.
pub fn random_injected_pair(behavior: &PolicyParams, instance: u64, n: usize, rng: &mut ChaCha8Rng) -> (RolloutGroup, RolloutGroup) {
    let v = behavior.dims().vocab;
    let mut generation = random_group(behavior, instance, n, rng);
    let mut ref_ctx = generation.prompt.tokens().to_vec();
    ref_ctx.extend(seq(rng, v, 2, 5).into_vec());
    let ref_ctx = TokenSeq::from_vec(ref_ctx);
    let rewards = binary_rewards(rng, n);
    let members: Vec<_> = rewards
        .iter()
        .map(|&r| on_policy(behavior, ContextId::Refinement(instance), &ref_ctx, seq(rng, v, 1, 4), r))
        .collect();
    let refinement = RolloutGroup {
        instance,
        prompt: ref_ctx,
        members,
        group_kind: GroupKind::Refinement,
    };
    let success = refinement.members.iter().find(|m| m.reward == 1.0).unwrap().clone();
    let slot = generation.members.iter().position(|m| m.reward == 0.0).unwrap();
    generation.members[slot] = TrajectoryRecord {
        origin: Origin::OffPolicyInjected,
        ..success
    };
    (generation, refinement)
}

pub fn joint(generation: &RolloutGroup, refinement: &RolloutGroup) -> TrainingBatch {
    let adv = |g: &RolloutGroup| group_advantages(&g.rewards(), AdvantageMode::DrGrpo).unwrap().values;
    TrainingBatch {
        groups: vec![
            BatchGroup {
                advantages: adv(generation),
                group: generation.clone(),
            },
            BatchGroup {
                advantages: adv(refinement),
                group: refinement.clone(),
            },
        ],
    }
}

pub fn random_sft_examples(vocab: usize, rng: &mut ChaCha8Rng) -> Vec<SftExample> {
    (0..rng.gen_range(1..=4))
        .map(|_| SftExample {
            context: seq(rng, vocab, 1, 4),
            target: seq(rng, vocab, 1, 4),
        })
        .collect()
}

/// Central differences of `f` at `p`, one coordinate at a time.
pub fn numeric_gradient(p: &PolicyParams, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    let mut work = p.clone();
    (0..p.as_slice().len())
        .map(|i| {
            let x = p.as_slice()[i];
            work.as_mut_slice()[i] = x + FD_STEP;
            let up = f(&work);
            work.as_mut_slice()[i] = x - FD_STEP;
            let down = f(&work);
            work.as_mut_slice()[i] = x;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest per-coordinate relative error.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR))
        .fold(0.0, f64::max)
}

/// Runs an objective that returns its value and accumulates its gradient,
/// and compares that gradient against central differences of the value.
pub fn check_gradient(p: &PolicyParams, objective: impl Fn(&PolicyParams, &mut GradAccumulator) -> f64) -> f64 {
    let mut acc = GradAccumulator::zeros(p.dims());
    objective(p, &mut acc);
    let numeric = numeric_gradient(p, |q| objective(q, &mut GradAccumulator::zeros(q.dims())));
    max_relative_error(acc.as_slice(), &numeric)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
