//! Domain types and group bookkeeping shared by the rest of the engine.

use serde::{Deserialize, Serialize};

use crate::error::{GolfError, Result};
use crate::vocab::{Token, FAIL, OK};

/// Ordered token ids, each below the vocabulary size it was checked against.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<Token>);

impl TokenSeq {
    /// Checked constructor.
    pub fn new(tokens: Vec<Token>, vocab: usize) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(GolfError::BadToken { token: bad, vocab });
        }
        Ok(TokenSeq(tokens))
    }

    /// Unchecked; the policy re-validates ids before use.
    pub fn from_vec(tokens: Vec<Token>) -> Self {
        TokenSeq(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<Token> {
        self.0
    }
}

impl From<Vec<Token>> for TokenSeq {
    fn from(v: Vec<Token>) -> Self {
        TokenSeq(v)
    }
}

impl AsRef<[Token]> for TokenSeq {
    fn as_ref(&self) -> &[Token] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CritiqueKind {
    /// Bare pass/fail marker.
    Simple,
    /// Reveals the reference answer.
    IndicativeGroundTruth,
    /// Reports the measured quantity against the requirement.
    ConstraintReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueText {
    pub kind: CritiqueKind,
    pub tokens: TokenSeq,
}

impl CritiqueText {
    pub fn failure_marker() -> Self {
        CritiqueText {
            kind: CritiqueKind::Simple,
            tokens: TokenSeq::from_vec(vec![FAIL]),
        }
    }

    pub fn satisfied() -> Self {
        CritiqueText {
            kind: CritiqueKind::Simple,
            tokens: TokenSeq::from_vec(vec![OK]),
        }
    }

    pub fn is_satisfied(&self) -> bool {
        self.tokens.tokens() == [OK]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    OnPolicy,
    OffPolicyInjected,
}

/// Which conditioning sequence a trajectory was sampled under.
///
/// The payload is the prompt instance id, so a refinement context id names
/// the aggregated context built for that instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextId {
    Prompt(u64),
    Refinement(u64),
}

impl ContextId {
    pub fn instance(self) -> u64 {
        match self {
            ContextId::Prompt(i) | ContextId::Refinement(i) => i,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub context_id: ContextId,
    pub response: TokenSeq,
    /// Per-token log-probabilities under the behavior snapshot, at temperature 1.
    pub behavior_logprobs: Vec<f64>,
    pub reward: f64,
    pub critique: CritiqueText,
    pub origin: Origin,
}

impl TrajectoryRecord {
    pub fn is_off_policy(&self) -> bool {
        self.origin == Origin::OffPolicyInjected
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Generation,
    Refinement,
}

/// N trajectories for one prompt instance.
///
/// `prompt` is the conditioning sequence used to score members under the
/// current policy: the task prompt for generation groups and the rendered
/// refinement context for refinement groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub instance: u64,
    pub prompt: TokenSeq,
    pub members: Vec<TrajectoryRecord>,
    pub group_kind: GroupKind,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.reward).collect()
    }

    pub fn token_count(&self) -> usize {
        self.members.iter().map(|m| m.response.len()).sum()
    }
}

/// One failed attempt with the critique it received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub response: TokenSeq,
    pub critique: CritiqueText,
}

pub fn group_mean_reward(group: &RolloutGroup) -> Result<f64> {
    if group.members.is_empty() {
        return Err(GolfError::EmptyGroup);
    }
    let sum: f64 = group.members.iter().map(|m| m.reward).sum();
    Ok(sum / group.members.len() as f64)
}

/// Reward-0 members in sampling order, paired with their critiques.
pub fn failure_set(group: &RolloutGroup) -> Result<Vec<Failure>> {
    if group.members.is_empty() {
        return Err(GolfError::EmptyGroup);
    }
    let mut out = Vec::new();
    for m in &group.members {
        if m.reward == 0.0 {
            out.push(Failure {
                response: m.response.clone(),
                critique: m.critique.clone(),
            });
        } else if m.reward != 1.0 {
            return Err(GolfError::NonBinaryReward(m.reward));
        }
    }
    Ok(out)
}

pub fn is_zero_reward_group(group: &RolloutGroup) -> bool {
    !group.members.is_empty() && group.members.iter().all(|m| m.reward == 0.0)
}


#[cfg(test)]
mod tests {
    use super::fixtures::group;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_reward_examples() {
        assert_eq!(group_mean_reward(&group(&[0.0; 4])).unwrap(), 0.0);
        assert_eq!(group_mean_reward(&group(&[1.0; 4])).unwrap(), 1.0);
        let g = group(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(group_mean_reward(&g).unwrap(), 0.25);
        assert!(matches!(
            group_mean_reward(&group(&[])),
            Err(GolfError::EmptyGroup)
        ));
    }

    #[test]
    fn failure_set_examples() {
        assert!(failure_set(&group(&[1.0, 1.0, 1.0])).unwrap().is_empty());

        let g = group(&[1.0, 0.0, 1.0]);
        let f = failure_set(&g).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].response, g.members[1].response);
        assert_eq!(f[0].critique, g.members[1].critique);

        let g = group(&[0.0, 0.0]);
        let f = failure_set(&g).unwrap();
        assert_eq!(f[0].response, g.members[0].response);
        assert_eq!(f[1].response, g.members[1].response);

        assert!(matches!(
            failure_set(&group(&[1.0, 0.5])),
            Err(GolfError::NonBinaryReward(_))
        ));
    }

    #[test]
    fn zero_reward_examples() {
        assert!(is_zero_reward_group(&group(&[0.0, 0.0, 0.0])));
        assert!(!is_zero_reward_group(&group(&[0.0, 1.0, 0.0])));
        assert!(!is_zero_reward_group(&group(&[1.0, 1.0])));
    }

    #[test]
    fn token_seq_rejects_out_of_range() {
        assert!(TokenSeq::new(vec![1, 2, 63], 64).is_ok());
        assert!(matches!(
            TokenSeq::new(vec![64], 64),
            Err(GolfError::BadToken { token: 64, .. })
        ));
    }

    proptest! {
        #[test]
        fn failures_and_successes_partition(bits in proptest::collection::vec(any::<bool>(), 1..16)) {
            let rewards: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let g = group(&rewards);
            let fails = failure_set(&g).unwrap();
            let successes = rewards.iter().filter(|&&r| r == 1.0).count();
            prop_assert_eq!(fails.len() + successes, rewards.len());
            // Failures appear in sampling order.
            let fail_members: Vec<_> = g.members.iter().filter(|m| m.reward == 0.0).collect();
            for (f, m) in fails.iter().zip(fail_members) {
                prop_assert_eq!(&f.response, &m.response);
            }
            let mean = group_mean_reward(&g).unwrap();
            prop_assert_eq!(is_zero_reward_group(&g), mean == 0.0);
        }

        #[test]
        fn mean_is_permutation_invariant(bits in proptest::collection::vec(any::<bool>(), 1..16), rot in 0usize..16) {
            let rewards: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let mut rotated = rewards.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            prop_assert_eq!(
                group_mean_reward(&group(&rewards)).unwrap(),
                group_mean_reward(&group(&rotated)).unwrap()
            );
        }
    }
}
