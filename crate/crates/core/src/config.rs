//! Run configuration: a flat `key = value` text format.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. The
//! special key `preset` selects a task preset and is applied before every
//! other key regardless of where it appears. [`TrainConfig::to_text`] emits
//! every key with its resolved value, so a written config fully reproduces
//! the run.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::envs::{Difficulty, FeedbackMode, TaskKind, TaskSpec};
use crate::error::{GolfError, Result};
use crate::golf::InjectionMode;
use crate::policy::PolicyDims;
use crate::vocab::VOCAB_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Grpo,
    DrGrpo,
    Golf,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Grpo => "grpo",
            Algorithm::DrGrpo => "dr_grpo",
            Algorithm::Golf => "golf",
        })
    }
}

impl FromStr for Algorithm {
    type Err = GolfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(Algorithm::Grpo),
            "dr_grpo" => Ok(Algorithm::DrGrpo),
            "golf" => Ok(Algorithm::Golf),
            other => Err(GolfError::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// How successful refinements train the generation policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffPolicyMode {
    /// Inject into the generation group and train with the mixed objective.
    MixedRl,
    /// Imitate them with a supervised loss instead.
    Sft,
}

impl fmt::Display for OffPolicyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OffPolicyMode::MixedRl => "mixed_rl",
            OffPolicyMode::Sft => "sft",
        })
    }
}

impl FromStr for OffPolicyMode {
    type Err = GolfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed_rl" => Ok(OffPolicyMode::MixedRl),
            "sft" => Ok(OffPolicyMode::Sft),
            other => Err(GolfError::Config(format!("unknown off-policy mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskSpec,
    pub algorithm: Algorithm,
    pub group_size: usize,
    /// Injection threshold on the generation group's mean reward; `None` means `1/N`.
    pub tau: Option<f64>,
    pub epsilon: f64,
    pub lambda: f64,
    pub temperature: f64,
    pub lr: f64,
    pub feedback: FeedbackMode,
    pub injection: InjectionMode,
    pub off_policy: OffPolicyMode,
    /// Train on refinement groups alongside generation groups.
    pub joint_refinement: bool,
    pub clip_off_policy: bool,
    pub failure_cap: usize,
    pub max_context_len: usize,
    pub sft_coef: f64,
    pub steps: u64,
    pub prompts_per_step: usize,
    pub seed: u64,
    pub d_emb: usize,
    pub d_h: usize,
    pub checkpoint_every: u64,
    pub eval_instances: usize,
    pub eval_samples: usize,
    pub eval_seed: u64,
    /// Mean training reward that counts as "reached" for steps-to-threshold.
    pub success_threshold: f64,
}

/// Named task settings. `hard` and `medium` answer with a single token, so an
/// untrained policy succeeds about 1/64 of the time and cannot hedge between
/// several numbers. `medium` has 9 distinct prompts, `hard` has 25.
pub fn preset(name: &str) -> Result<TaskSpec> {
    let spec = |kind, difficulty, max_response_len| TaskSpec {
        kind,
        difficulty,
        vocab_size: VOCAB_SIZE,
        max_prompt_len: 16,
        max_response_len,
    };
    let t = match name {
        "hard" => spec(
            TaskKind::ExactAnswerArithmetic,
            Difficulty {
                max_operand: 4,
                ops: "+".into(),
                ..Default::default()
            },
            1,
        ),
        "medium" => spec(
            TaskKind::ExactAnswerArithmetic,
            Difficulty {
                max_operand: 2,
                ops: "+".into(),
                ..Default::default()
            },
            1,
        ),
        "sorting" => spec(
            TaskKind::SortedOutput,
            Difficulty {
                list_len: 2,
                alphabet: 3,
                ..Default::default()
            },
            4,
        ),
        "unique" => spec(
            TaskKind::UniqueSymbolCount,
            Difficulty {
                k: 4,
                alphabet: 16,
                ..Default::default()
            },
            6,
        ),
        other => return Err(GolfError::Config(format!("unknown preset {other:?}"))),
    };
    t.validate()?;
    Ok(t)
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: preset("medium").expect("built-in preset"),
            algorithm: Algorithm::Golf,
            group_size: 8,
            tau: None,
            epsilon: 0.2,
            lambda: 0.1,
            temperature: 1.0,
            lr: 1e-3,
            feedback: FeedbackMode::Mixed,
            injection: InjectionMode::Adaptive,
            off_policy: OffPolicyMode::MixedRl,
            joint_refinement: true,
            clip_off_policy: false,
            failure_cap: 4,
            max_context_len: 128,
            sft_coef: 0.1,
            steps: 300,
            prompts_per_step: 16,
            seed: 0,
            d_emb: 32,
            d_h: 64,
            checkpoint_every: 100,
            eval_instances: 200,
            eval_samples: 8,
            eval_seed: 0xE7A1,
            success_threshold: 0.5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| GolfError::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(GolfError::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

impl TrainConfig {
    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(1.0 / self.group_size as f64)
    }

    pub fn dims(&self) -> PolicyDims {
        PolicyDims {
            vocab: self.task.vocab_size,
            d_emb: self.d_emb,
            d_h: self.d_h,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.task.difficulty;
        match key {
            "preset" => self.task = preset(value)?,
            "task" => self.task.kind = value.parse()?,
            "k" => d.k = parse(key, value)?,
            "max_operand" => d.max_operand = parse(key, value)?,
            "ops" => d.ops = value.to_string(),
            "list_len" => d.list_len = parse(key, value)?,
            "alphabet" => d.alphabet = parse(key, value)?,
            "max_prompt_len" => self.task.max_prompt_len = parse(key, value)?,
            "max_response_len" => self.task.max_response_len = parse(key, value)?,
            "algorithm" => self.algorithm = value.parse()?,
            "group_size" => self.group_size = parse(key, value)?,
            "tau" => {
                self.tau = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "epsilon" => self.epsilon = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "feedback" => self.feedback = value.parse()?,
            "injection" => self.injection = value.parse()?,
            "off_policy" => self.off_policy = value.parse()?,
            "joint_refinement" => self.joint_refinement = parse_bool(key, value)?,
            "clip_off_policy" => self.clip_off_policy = parse_bool(key, value)?,
            "failure_cap" => self.failure_cap = parse(key, value)?,
            "max_context_len" => self.max_context_len = parse(key, value)?,
            "sft_coef" => self.sft_coef = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "prompts_per_step" => self.prompts_per_step = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "d_emb" => self.d_emb = parse(key, value)?,
            "d_h" => self.d_h = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "eval_instances" => self.eval_instances = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "eval_seed" => self.eval_seed = parse(key, value)?,
            "success_threshold" => self.success_threshold = parse(key, value)?,
            other => return Err(GolfError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `(key, value)` pairs; a `preset` entry goes first.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let pairs: Vec<_> = pairs.into_iter().collect();
        for (k, v) in pairs.iter().filter(|(k, _)| *k == "preset") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| *k != "preset") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GolfError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            pairs.push((k.trim(), v.trim()));
        }
        let mut cfg = TrainConfig::default();
        cfg.apply(pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GolfError::io(path, e))?;
        Self::parse_text(&text)
    }

    /// Applies `--key=value` command-line overrides.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut pairs = Vec::new();
        for a in args {
            let body = a
                .strip_prefix("--")
                .ok_or_else(|| GolfError::Config(format!("override {a:?} must look like --key=value")))?;
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| GolfError::Config(format!("override {a:?} must look like --key=value")))?;
            pairs.push((k.replace('-', "_"), v.to_string()));
        }
        self.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GolfError::Config(m.to_string()));
        self.task.validate()?;
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        let tau = self.tau();
        if !(tau > 0.0 && tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must be in (0, 1)");
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return bad("lambda must be > 0");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be > 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if self.prompts_per_step == 0 {
            return bad("prompts_per_step must be positive");
        }
        if self.failure_cap == 0 {
            return bad("failure_cap must be positive");
        }
        if self.max_context_len < self.task.max_prompt_len {
            return bad("max_context_len must cover the prompt");
        }
        if self.eval_samples == 0 {
            return bad("eval_samples must be positive");
        }
        if self.dims().param_count() >= 100_000 {
            return bad("policy must have fewer than 100000 parameters");
        }
        Ok(())
    }

    /// Every key with its resolved value, one per line.
    pub fn to_text(&self) -> String {
        let d = &self.task.difficulty;
        let tau = match self.tau {
            Some(t) => format!("{t}"),
            None => "auto".into(),
        };
        let entries: Vec<(&str, String)> = vec![
            ("task", self.task.kind.to_string()),
            ("k", d.k.to_string()),
            ("max_operand", d.max_operand.to_string()),
            ("ops", d.ops.clone()),
            ("list_len", d.list_len.to_string()),
            ("alphabet", d.alphabet.to_string()),
            ("max_prompt_len", self.task.max_prompt_len.to_string()),
            ("max_response_len", self.task.max_response_len.to_string()),
            ("algorithm", self.algorithm.to_string()),
            ("group_size", self.group_size.to_string()),
            ("tau", tau),
            ("epsilon", self.epsilon.to_string()),
            ("lambda", self.lambda.to_string()),
            ("temperature", self.temperature.to_string()),
            ("lr", self.lr.to_string()),
            ("feedback", self.feedback.to_string()),
            ("injection", self.injection.to_string()),
            ("off_policy", self.off_policy.to_string()),
            ("joint_refinement", self.joint_refinement.to_string()),
            ("clip_off_policy", self.clip_off_policy.to_string()),
            ("failure_cap", self.failure_cap.to_string()),
            ("max_context_len", self.max_context_len.to_string()),
            ("sft_coef", self.sft_coef.to_string()),
            ("steps", self.steps.to_string()),
            ("prompts_per_step", self.prompts_per_step.to_string()),
            ("seed", self.seed.to_string()),
            ("d_emb", self.d_emb.to_string()),
            ("d_h", self.d_h.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("eval_instances", self.eval_instances.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
            ("success_threshold", self.success_threshold.to_string()),
        ];
        let mut out = String::from("# golf run configuration\n");
        out.push_str(&format!("# resolved tau = {}\n", self.tau()));
        for (k, v) in entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
