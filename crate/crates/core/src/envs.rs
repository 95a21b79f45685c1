//! Synthetic verifiable tasks with token-rendered critiques.
//!
//! Every task shares the 64-token vocabulary in [`crate::vocab`]. A verdict is
//! a pure function of `(prompt, hidden_target, response)`; failing verdicts
//! carry a critique that either reports the violated constraint or reveals
//! the reference answer.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GolfError, Result};
use crate::types::{CritiqueKind, CritiqueText, TokenSeq};
use crate::vocab::{self, Token, BOS, EOS, EQ, FAIL, GT, HAVE, MINUS, NEED, PLUS, TASK_SORT, TASK_UNIQ, TIMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Emit at least `k` distinct letters.
    UniqueSymbolCount,
    /// Emit the value of `a op b`; any maximal digit run may carry it.
    ExactAnswerArithmetic,
    /// Emit the prompt's letters in non-decreasing order, exactly.
    SortedOutput,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::UniqueSymbolCount => "unique_symbol_count",
            TaskKind::ExactAnswerArithmetic => "exact_answer_arithmetic",
            TaskKind::SortedOutput => "sorted_output",
        })
    }
}

impl FromStr for TaskKind {
    type Err = GolfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unique_symbol_count" => Ok(TaskKind::UniqueSymbolCount),
            "exact_answer_arithmetic" => Ok(TaskKind::ExactAnswerArithmetic),
            "sorted_output" => Ok(TaskKind::SortedOutput),
            other => Err(GolfError::Config(format!("unknown task kind {other:?}"))),
        }
    }
}

/// Feedback condition used when building refinement contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// One failure with a bare failure marker.
    Simple,
    /// Several failures, critiques reduced to failure markers.
    Intra,
    /// One failure with its full critique.
    External,
    /// Several failures with their full critiques.
    Mixed,
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedbackMode::Simple => "simple",
            FeedbackMode::Intra => "intra",
            FeedbackMode::External => "external",
            FeedbackMode::Mixed => "mixed",
        })
    }
}

impl FromStr for FeedbackMode {
    type Err = GolfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(FeedbackMode::Simple),
            "intra" => Ok(FeedbackMode::Intra),
            "external" => Ok(FeedbackMode::External),
            "mixed" => Ok(FeedbackMode::Mixed),
            other => Err(GolfError::Config(format!("unknown feedback mode {other:?}"))),
        }
    }
}

/// Task difficulty knobs. Only the fields relevant to the task kind are read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Difficulty {
    /// Required distinct letters (unique_symbol_count).
    pub k: u32,
    /// Largest operand (exact_answer_arithmetic).
    pub max_operand: u32,
    /// Operators drawn uniformly per instance, e.g. "+" or "+-*".
    pub ops: String,
    /// List length (sorted_output).
    pub list_len: u32,
    /// Number of letters in play (unique_symbol_count, sorted_output).
    pub alphabet: u32,
}

impl Default for Difficulty {
    fn default() -> Self {
        Difficulty {
            k: 3,
            max_operand: 9,
            ops: "+".into(),
            list_len: 3,
            alphabet: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub difficulty: Difficulty,
    pub vocab_size: usize,
    pub max_prompt_len: usize,
    pub max_response_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub prompt: TokenSeq,
    /// Reference for the verifier; never shown to the policy.
    pub hidden_target: TokenSeq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub reward: f64,
    pub critique: CritiqueText,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, difficulty: Difficulty, max_response_len: usize) -> Result<Self> {
        let spec = TaskSpec {
            kind,
            difficulty,
            vocab_size: vocab::VOCAB_SIZE,
            max_prompt_len: 16,
            max_response_len,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn ops(&self) -> Result<Vec<Token>> {
        let ops: Vec<Token> = self
            .difficulty
            .ops
            .chars()
            .map(|c| match c {
                '+' => Ok(PLUS),
                '-' => Ok(MINUS),
                '*' => Ok(TIMES),
                other => Err(GolfError::BadTaskSpec(format!("unknown operator {other:?}"))),
            })
            .collect::<Result<_>>()?;
        if ops.is_empty() {
            return Err(GolfError::BadTaskSpec("empty operator set".into()));
        }
        Ok(ops)
    }

    /// Longest prompt this spec can produce.
    fn worst_prompt_len(&self) -> usize {
        let d = &self.difficulty;
        match self.kind {
            TaskKind::UniqueSymbolCount => 3 + d.k.to_string().len(),
            TaskKind::ExactAnswerArithmetic => 3 + 2 * d.max_operand.to_string().len(),
            TaskKind::SortedOutput => 3 + d.list_len as usize,
        }
    }

    fn worst_answer_len(&self) -> Result<usize> {
        let d = &self.difficulty;
        Ok(match self.kind {
            TaskKind::UniqueSymbolCount => d.k as usize,
            TaskKind::ExactAnswerArithmetic => {
                let m = u64::from(d.max_operand);
                let worst = self
                    .ops()?
                    .iter()
                    .map(|&op| if op == TIMES { m * m } else { 2 * m })
                    .max()
                    .unwrap_or(0);
                worst.to_string().len()
            }
            TaskKind::SortedOutput => d.list_len as usize,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GolfError::BadTaskSpec(msg));
        if self.vocab_size < vocab::VOCAB_SIZE {
            return bad(format!(
                "vocabulary of {} cannot hold the {} task tokens",
                self.vocab_size,
                vocab::VOCAB_SIZE
            ));
        }
        let d = &self.difficulty;
        match self.kind {
            TaskKind::UniqueSymbolCount => {
                if d.k == 0 || d.alphabet < d.k || d.alphabet > vocab::NUM_LETTERS {
                    return bad(format!("need 1 <= k <= alphabet <= 16, got k={} alphabet={}", d.k, d.alphabet));
                }
            }
            TaskKind::ExactAnswerArithmetic => {
                self.ops()?;
                if d.max_operand > 9999 {
                    return bad(format!("max_operand {} too large", d.max_operand));
                }
            }
            TaskKind::SortedOutput => {
                if d.list_len == 0 || d.alphabet == 0 || d.alphabet > vocab::NUM_LETTERS {
                    return bad(format!("need list_len >= 1 and 1 <= alphabet <= 16, got {} / {}", d.list_len, d.alphabet));
                }
            }
        }
        if self.worst_prompt_len() > self.max_prompt_len {
            return bad(format!(
                "prompts need {} tokens, max_prompt_len is {}",
                self.worst_prompt_len(),
                self.max_prompt_len
            ));
        }
        let answer = self.worst_answer_len()?;
        if answer > self.max_response_len {
            return bad(format!(
                "answers need {answer} tokens, max_response_len is {}",
                self.max_response_len
            ));
        }
        Ok(())
    }
}

pub fn generate_instance(task: &TaskSpec, rng_seed: u64) -> Result<Instance> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let d = &task.difficulty;
    let (prompt, target) = match task.kind {
        TaskKind::UniqueSymbolCount => {
            let mut p = vec![BOS, TASK_UNIQ];
            p.extend(vocab::number(u64::from(d.k)));
            p.push(EQ);
            (p, vocab::number(u64::from(d.k)))
        }
        TaskKind::ExactAnswerArithmetic => {
            let ops = task.ops()?;
            let op = ops[rng.gen_range(0..ops.len())];
            let mut a = u64::from(rng.gen_range(0..=d.max_operand));
            let mut b = u64::from(rng.gen_range(0..=d.max_operand));
            if op == MINUS && b > a {
                std::mem::swap(&mut a, &mut b);
            }
            let value = match op {
                PLUS => a + b,
                MINUS => a - b,
                _ => a * b,
            };
            let mut p = vec![BOS];
            p.extend(vocab::number(a));
            p.push(op);
            p.extend(vocab::number(b));
            p.push(EQ);
            (p, vocab::number(value))
        }
        TaskKind::SortedOutput => {
            let items: Vec<Token> = (0..d.list_len)
                .map(|_| vocab::letter(rng.gen_range(0..d.alphabet)))
                .collect();
            let mut sorted = items.clone();
            sorted.sort_unstable();
            let mut p = vec![BOS, TASK_SORT];
            p.extend(items);
            p.push(EQ);
            (p, sorted)
        }
    };
    Ok(Instance {
        prompt: TokenSeq::new(prompt, task.vocab_size)?,
        hidden_target: TokenSeq::new(target, task.vocab_size)?,
    })
}

/// Tokens before the first EOS.
pub fn answer_span(response: &[Token]) -> &[Token] {
    let end = response.iter().position(|&t| t == EOS).unwrap_or(response.len());
    &response[..end]
}

fn digit_runs(tokens: &[Token]) -> impl Iterator<Item = &[Token]> {
    tokens
        .split(|&t| !vocab::is_digit(t))
        .filter(|run| !run.is_empty())
}

fn failing(kind: CritiqueKind, tokens: Vec<Token>) -> Verdict {
    Verdict {
        reward: 0.0,
        critique: CritiqueText {
            kind,
            tokens: TokenSeq::from_vec(tokens),
        },
    }
}

fn passing() -> Verdict {
    Verdict {
        reward: 1.0,
        critique: CritiqueText::satisfied(),
    }
}

pub fn verify(task: &TaskSpec, _prompt: &TokenSeq, hidden_target: &TokenSeq, response: &TokenSeq) -> Verdict {
    let answer = answer_span(response.tokens());
    let target = hidden_target.tokens();
    match task.kind {
        TaskKind::UniqueSymbolCount => {
            let distinct: BTreeSet<Token> = answer.iter().copied().filter(|&t| vocab::is_letter(t)).collect();
            let k = u64::from(task.difficulty.k);
            let have = distinct.len() as u64;
            if have >= k {
                passing()
            } else {
                let mut c = vec![FAIL, HAVE];
                c.extend(vocab::number(have));
                c.push(NEED);
                c.extend(vocab::number(k));
                failing(CritiqueKind::ConstraintReport, c)
            }
        }
        TaskKind::ExactAnswerArithmetic => {
            if digit_runs(answer).any(|run| run == target) {
                passing()
            } else {
                let mut c = vec![FAIL, GT];
                c.extend_from_slice(target);
                failing(CritiqueKind::IndicativeGroundTruth, c)
            }
        }
        TaskKind::SortedOutput => {
            if answer == target {
                passing()
            } else {
                let mut c = vec![FAIL, GT];
                c.extend_from_slice(target);
                failing(CritiqueKind::IndicativeGroundTruth, c)
            }
        }
    }
}

/// Critique as seen by the refinement context under a feedback condition.
pub fn critique_for_mode(verdict: &Verdict, mode: FeedbackMode) -> CritiqueText {
    if verdict.reward == 1.0 {
        return verdict.critique.clone();
    }
    match mode {
        FeedbackMode::Simple | FeedbackMode::Intra => CritiqueText::failure_marker(),
        FeedbackMode::External | FeedbackMode::Mixed => verdict.critique.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{digit, letter, OK};
    use proptest::prelude::*;

    fn uniq(k: u32) -> TaskSpec {
        TaskSpec::new(
            TaskKind::UniqueSymbolCount,
            Difficulty { k, alphabet: 16, ..Default::default() },
            8,
        )
        .unwrap()
    }

    fn arith() -> TaskSpec {
        TaskSpec::new(TaskKind::ExactAnswerArithmetic, Difficulty::default(), 4).unwrap()
    }

    fn seq(t: Vec<Token>) -> TokenSeq {
        TokenSeq::from_vec(t)
    }

    #[test]
    fn unique_prompt_encodes_k() {
        let inst = generate_instance(&uniq(3), 1).unwrap();
        assert_eq!(inst.prompt.tokens(), &[BOS, TASK_UNIQ, digit(3), EQ]);
    }

    #[test]
    fn arithmetic_prompt_and_target() {
        let task = arith();
        let mut found = false;
        for seed in 0..500 {
            let inst = generate_instance(&task, seed).unwrap();
            if inst.prompt.tokens() == [BOS, digit(2), PLUS, digit(3), EQ] {
                assert_eq!(inst.hidden_target.tokens(), &[digit(5)]);
                found = true;
            }
            assert!(inst.prompt.len() <= task.max_prompt_len);
        }
        assert!(found);
    }

    #[test]
    fn generation_is_deterministic() {
        for task in [uniq(3), arith()] {
            assert_eq!(generate_instance(&task, 42).unwrap(), generate_instance(&task, 42).unwrap());
        }
    }

    #[test]
    fn bad_specs_rejected() {
        let too_many = TaskSpec {
            kind: TaskKind::UniqueSymbolCount,
            difficulty: Difficulty { k: 9, alphabet: 16, ..Default::default() },
            vocab_size: 64,
            max_prompt_len: 16,
            max_response_len: 4,
        };
        assert!(matches!(generate_instance(&too_many, 0), Err(GolfError::BadTaskSpec(_))));
        let small_vocab = TaskSpec { vocab_size: 32, ..arith() };
        assert!(matches!(generate_instance(&small_vocab, 0), Err(GolfError::BadTaskSpec(_))));
        let huge = TaskSpec {
            difficulty: Difficulty { max_operand: 999, ops: "*".into(), ..Default::default() },
            ..arith()
        };
        assert!(matches!(huge.validate(), Err(GolfError::BadTaskSpec(_))));
    }

    #[test]
    fn unique_symbol_verdicts() {
        let task = uniq(3);
        let inst = generate_instance(&task, 0).unwrap();
        let four = seq(vec![letter(0), letter(1), letter(2), letter(3), EOS]);
        let v = verify(&task, &inst.prompt, &inst.hidden_target, &four);
        assert_eq!(v.reward, 1.0);
        assert_eq!(v.critique.tokens.tokens(), &[OK]);

        let two = seq(vec![letter(0), letter(1), letter(0), EOS]);
        let v = verify(&task, &inst.prompt, &inst.hidden_target, &two);
        assert_eq!(v.reward, 0.0);
        assert_eq!(v.critique.kind, CritiqueKind::ConstraintReport);
        assert_eq!(v.critique.tokens.tokens(), &[FAIL, HAVE, digit(2), NEED, digit(3)]);
    }

    #[test]
    fn arithmetic_mismatch_reveals_target() {
        let task = arith();
        let prompt = seq(vec![BOS, digit(2), PLUS, digit(3), EQ]);
        let target = seq(vec![digit(5)]);
        let v = verify(&task, &prompt, &target, &seq(vec![digit(6), EOS]));
        assert_eq!(v.reward, 0.0);
        assert_eq!(v.critique.kind, CritiqueKind::IndicativeGroundTruth);
        assert_eq!(v.critique.tokens.tokens(), &[FAIL, GT, digit(5)]);
        // The expected number may appear anywhere as a whole digit run.
        let v = verify(&task, &prompt, &target, &seq(vec![letter(1), digit(5), EOS]));
        assert_eq!(v.reward, 1.0);
        let v = verify(&task, &prompt, &target, &seq(vec![digit(1), digit(5), EOS]));
        assert_eq!(v.reward, 0.0);
        // Tokens after EOS are ignored.
        let v = verify(&task, &prompt, &target, &seq(vec![EOS, digit(5)]));
        assert_eq!(v.reward, 0.0);
    }

    #[test]
    fn sorted_output_is_exact() {
        let task = TaskSpec::new(TaskKind::SortedOutput, Difficulty::default(), 4).unwrap();
        let inst = generate_instance(&task, 3).unwrap();
        let mut good = inst.hidden_target.tokens().to_vec();
        good.push(EOS);
        assert_eq!(verify(&task, &inst.prompt, &inst.hidden_target, &seq(good.clone())).reward, 1.0);
        good.insert(0, letter(0));
        let v = verify(&task, &inst.prompt, &inst.hidden_target, &seq(good));
        assert_eq!(v.reward, 0.0);
        let mut expect = vec![FAIL, GT];
        expect.extend_from_slice(inst.hidden_target.tokens());
        assert_eq!(v.critique.tokens.tokens(), expect.as_slice());
    }

    #[test]
    fn critique_modes() {
        let fail = Verdict {
            reward: 0.0,
            critique: CritiqueText {
                kind: CritiqueKind::ConstraintReport,
                tokens: seq(vec![FAIL, HAVE, digit(2), NEED, digit(3)]),
            },
        };
        assert_eq!(critique_for_mode(&fail, FeedbackMode::Simple), CritiqueText::failure_marker());
        assert_eq!(critique_for_mode(&fail, FeedbackMode::Intra), CritiqueText::failure_marker());
        assert_eq!(critique_for_mode(&fail, FeedbackMode::External), fail.critique);
        assert_eq!(critique_for_mode(&fail, FeedbackMode::Mixed), fail.critique);
        let ok = Verdict { reward: 1.0, critique: CritiqueText::satisfied() };
        for mode in [FeedbackMode::Simple, FeedbackMode::Intra, FeedbackMode::External, FeedbackMode::Mixed] {
            assert_eq!(critique_for_mode(&ok, mode), ok.critique);
        }
    }

    proptest! {
        #[test]
        fn unique_count_matches_set_oracle(
            resp in proptest::collection::vec(0u32..64, 1..8),
            k in 1u32..8,
        ) {
            let task = uniq(k);
            let inst = generate_instance(&task, 0).unwrap();
            let response = seq(resp.clone());
            let v = verify(&task, &inst.prompt, &inst.hidden_target, &response);
            // Independent oracle: quadratic distinctness scan over the pre-EOS prefix.
            let mut prefix = Vec::new();
            for &t in &resp {
                if t == EOS { break; }
                prefix.push(t);
            }
            let mut distinct = 0u32;
            for (i, &t) in prefix.iter().enumerate() {
                if (10..26).contains(&t) && !prefix[..i].contains(&t) {
                    distinct += 1;
                }
            }
            prop_assert_eq!(v.reward, if distinct >= k { 1.0 } else { 0.0 });
            prop_assert_eq!(&v, &verify(&task, &inst.prompt, &inst.hidden_target, &response));
            if v.reward == 0.0 {
                prop_assert_eq!(v.critique.kind, CritiqueKind::ConstraintReport);
            }
        }

        #[test]
        fn failing_critique_kind_matches_task(resp in proptest::collection::vec(0u32..64, 1..5), seed in 0u64..100) {
            for (task, kind) in [
                (arith(), CritiqueKind::IndicativeGroundTruth),
                (TaskSpec::new(TaskKind::SortedOutput, Difficulty::default(), 4).unwrap(), CritiqueKind::IndicativeGroundTruth),
            ] {
                let inst = generate_instance(&task, seed).unwrap();
                let v = verify(&task, &inst.prompt, &inst.hidden_target, &seq(resp.clone()));
                if v.reward == 0.0 {
                    prop_assert_eq!(v.critique.kind, kind);
                } else {
                    prop_assert!(v.critique.is_satisfied());
                }
            }
        }
    }
}
