//! Training orchestration, persistence, evaluation and the ablation suite.
//!
//! One step, for each of `prompts_per_step` fresh instances:
//! sample a generation group under the step's behavior snapshot, verify it,
//! and for GOLF aggregate its failures into a refinement context, sample and
//! verify a refinement group, and decide on injection. All groups of the step
//! then form one batch with a shared token normalizer, and one Adam update is
//! applied. Per-prompt work runs through [`crate::par`]; its results are
//! reduced in prompt order, so parallelism never changes a run.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{Algorithm, OffPolicyMode, TrainConfig};
use crate::envs::{generate_instance, FeedbackMode, Instance, TaskSpec};
use crate::error::{GolfError, Result};
use crate::golf::{
    aggregate_refinement_context, batch_objective, inject_with, joint_batch, sample_refinement_group, should_inject,
    successful_refinements, InjectionDecision, InjectionMode, InjectionPick, TrainingBatch,
};
use crate::grpo::{grpo_objective_parts, AdvantageMode, SurrogateOpts};
use crate::metrics::{avg_at_n, batch_entropy, pass_at_k, zero_reward_ratio, MetricsRecord};
use crate::par;
use crate::policy::{adam_step, GradAccumulator, OptimizerState, PolicyParams, SampleOpts};
use crate::rollout::sample_group;
use crate::seeds::{self, purpose};
use crate::sft::{sft_loss_and_grad, SftExample};
use crate::types::{failure_set, group_mean_reward, is_zero_reward_group, ContextId, GroupKind, RolloutGroup};

const EVAL_SEED_BIT: u64 = 1 << 63;

/// Seed of the `index`-th training instance of `step`. Training seeds keep
/// the top bit clear; held-out seeds set it.
pub fn train_instance_seed(run_seed: u64, step: u64, index: usize) -> u64 {
    seeds::derive(run_seed, &[purpose::INSTANCE, step, index as u64]) & !EVAL_SEED_BIT
}

pub fn eval_instance_seed(eval_seed: u64, index: usize) -> u64 {
    seeds::derive(eval_seed, &[purpose::EVAL, index as u64]) | EVAL_SEED_BIT
}

/// Everything sampled for one prompt instance within a step.
#[derive(Debug, Clone)]
pub struct PromptRollout {
    pub generation: RolloutGroup,
    pub augmented: RolloutGroup,
    pub refinement: Option<RolloutGroup>,
    pub decision: InjectionDecision,
    pub sft_example: Option<SftExample>,
}

/// Per-step values that are not part of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: u64,
    pub refinement_groups: usize,
    pub refinement_mean_reward: Option<f64>,
    pub off_ratio_min: Option<f64>,
    pub off_ratio_max: Option<f64>,
    pub sft_examples: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub metrics: MetricsRecord,
    pub diagnostics: StepDiagnostics,
    pub sft_examples: Vec<SftExample>,
}

impl TrainConfig {
    fn sample_opts(&self) -> SampleOpts {
        SampleOpts::new(self.task.max_response_len, self.temperature)
    }

    fn surrogate_opts(&self) -> SurrogateOpts {
        SurrogateOpts {
            epsilon: self.epsilon,
            lambda: self.lambda,
            clip_off_policy: self.clip_off_policy,
        }
    }

    fn trains_refinement(&self) -> bool {
        self.algorithm == Algorithm::Golf && self.joint_refinement && self.off_policy == OffPolicyMode::MixedRl
    }

    fn needs_refinement(&self) -> bool {
        self.algorithm == Algorithm::Golf
            && (self.trains_refinement() || self.injection != InjectionMode::Never || self.off_policy == OffPolicyMode::Sft)
    }
}

fn rollout_prompt(cfg: &TrainConfig, behavior: &PolicyParams, step: u64, index: usize) -> Result<PromptRollout> {
    let instance_id = step * cfg.prompts_per_step as u64 + index as u64;
    let instance = generate_instance(&cfg.task, train_instance_seed(cfg.seed, step, index))?;
    let opts = cfg.sample_opts();
    let path = |p: u64| seeds::derive(cfg.seed, &[p, step, index as u64]);
    let generation = sample_group(
        behavior,
        &instance.prompt,
        ContextId::Prompt(instance_id),
        GroupKind::Generation,
        &cfg.task,
        &instance,
        cfg.group_size,
        &opts,
        path(purpose::GENERATION),
    )?;
    let mut out = PromptRollout {
        augmented: generation.clone(),
        generation,
        refinement: None,
        decision: InjectionDecision {
            triggered: false,
            replaced_index: None,
            injected: None,
        },
        sft_example: None,
    };
    if !cfg.needs_refinement() {
        return Ok(out);
    }
    let failures = failure_set(&out.generation)?;
    if failures.is_empty() {
        return Ok(out);
    }
    let ctx = aggregate_refinement_context(
        &instance.prompt,
        &failures,
        cfg.feedback,
        cfg.failure_cap,
        cfg.max_context_len,
        path(purpose::AGGREGATE),
    )?;
    let refinement = sample_refinement_group(
        behavior,
        &ctx,
        instance_id,
        &cfg.task,
        &instance,
        cfg.group_size,
        &opts,
        path(purpose::REFINEMENT),
    )?;
    let successes = successful_refinements(&refinement);
    let mean = group_mean_reward(&out.generation)?;
    let pick = match cfg.injection {
        InjectionMode::Adaptive if should_inject(mean, cfg.tau()) => Some(InjectionPick::Uniform),
        InjectionMode::Always => Some(InjectionPick::HighestReward),
        _ => None,
    };
    if let Some(pick) = pick {
        let (augmented, decision) = inject_with(&out.generation, &successes, pick, path(purpose::INJECT))?;
        match cfg.off_policy {
            OffPolicyMode::MixedRl => {
                out.augmented = augmented;
                out.decision = decision;
            }
            OffPolicyMode::Sft => {
                out.sft_example = decision.injected.as_ref().map(|m| SftExample {
                    context: instance.prompt.clone(),
                    target: m.response.clone(),
                });
                out.decision = decision;
            }
        }
    }
    out.refinement = Some(refinement);
    Ok(out)
}

/// One training step. `params` doubles as the behavior snapshot for all
/// sampling; it is only modified by the final optimizer update.
pub fn train_step(cfg: &TrainConfig, params: &mut PolicyParams, opt: &mut OptimizerState, step: u64) -> Result<StepOutput> {
    let behavior = params.clone();
    let rollouts = par::map_range(cfg.prompts_per_step, |i| rollout_prompt(cfg, &behavior, step, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let generation: Vec<RolloutGroup> = rollouts.iter().map(|r| r.generation.clone()).collect();
    let all_rewards: Vec<f64> = generation.iter().flat_map(|g| g.rewards()).collect();
    let mean_reward = avg_at_n(&all_rewards);
    let zero_ratio = zero_reward_ratio(&generation)?;
    let entropy = batch_entropy(&behavior, &generation)?;
    let triggered = rollouts.iter().filter(|r| r.decision.triggered).count();

    let mut acc = GradAccumulator::zeros(params.dims());
    let opts = cfg.surrogate_opts();
    let (parts, sft_loss, sft_examples) = match cfg.algorithm {
        Algorithm::Grpo | Algorithm::DrGrpo => {
            let mode = if cfg.algorithm == Algorithm::Grpo {
                AdvantageMode::Grpo
            } else {
                AdvantageMode::DrGrpo
            };
            (grpo_objective_parts(&behavior, &generation, &opts, mode, &mut acc)?, 0.0, Vec::new())
        }
        Algorithm::Golf => {
            let batches = rollouts
                .iter()
                .map(|r| {
                    let refinement = if cfg.trains_refinement() { r.refinement.as_ref() } else { None };
                    joint_batch(&r.augmented, refinement)
                })
                .collect::<Result<Vec<TrainingBatch>>>()?;
            let parts = batch_objective(&behavior, &batches, &opts, &mut acc)?;
            let examples: Vec<SftExample> = rollouts.iter().filter_map(|r| r.sft_example.clone()).collect();
            let sft_loss = if examples.is_empty() {
                0.0
            } else {
                sft_loss_and_grad(&behavior, &examples, cfg.sft_coef, &mut acc)?
            };
            (parts, sft_loss, examples)
        }
    };

    let metrics = MetricsRecord {
        step,
        mean_reward,
        zero_reward_ratio: zero_ratio,
        entropy,
        injection_rate: triggered as f64 / cfg.prompts_per_step as f64,
        on_loss: -parts.on,
        off_loss: if cfg.off_policy == OffPolicyMode::Sft { sft_loss } else { -parts.off },
        ref_loss: -parts.refine,
    };
    if !metrics.is_valid() {
        return Err(GolfError::NonFiniteLoss {
            step,
            detail: serde_json::to_string(&metrics).unwrap_or_default(),
        });
    }
    let refinement_rewards: Vec<f64> = rollouts
        .iter()
        .filter_map(|r| r.refinement.as_ref())
        .flat_map(|g| g.rewards())
        .collect();
    let diagnostics = StepDiagnostics {
        step,
        refinement_groups: rollouts.iter().filter(|r| r.refinement.is_some()).count(),
        refinement_mean_reward: (!refinement_rewards.is_empty()).then(|| avg_at_n(&refinement_rewards)),
        off_ratio_min: parts.off_ratio_min,
        off_ratio_max: parts.off_ratio_max,
        sft_examples: sft_examples.len(),
        tokens: parts.tokens,
    };
    adam_step(params, &acc, opt)?;
    Ok(StepOutput {
        metrics,
        diagnostics,
        sft_examples,
    })
}

/// In-memory training state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: PolicyParams,
    pub optimizer: OptimizerState,
    pub step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let dims = config.dims();
        Ok(Trainer {
            params: PolicyParams::init(dims, seeds::derive(config.seed, &[purpose::INIT])),
            optimizer: OptimizerState::new(dims, config.lr),
            step: 0,
            config,
        })
    }

    pub fn from_checkpoint(config: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        config.validate()?;
        if ckpt.params.dims() != config.dims() {
            return Err(GolfError::Checkpoint(format!(
                "checkpoint dims {:?} do not match config {:?}",
                ckpt.params.dims(),
                config.dims()
            )));
        }
        Ok(Trainer {
            params: ckpt.params,
            optimizer: ckpt.optimizer,
            step: ckpt.trainer_step,
            config,
        })
    }

    pub fn step(&mut self) -> Result<StepOutput> {
        let out = train_step(&self.config, &mut self.params, &mut self.optimizer, self.step)?;
        self.step += 1;
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            trainer_step: self.step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKTable {
    pub instances: usize,
    pub samples: usize,
    pub ks: Vec<usize>,
    pub pass_at_k: Vec<f64>,
    /// Mean reward over every sample, averaged per instance.
    pub mean_reward: f64,
}

/// Samples `n` responses per held-out instance and averages pass@k.
pub fn eval_pass_at_k(
    params: &PolicyParams,
    task: &TaskSpec,
    n: usize,
    ks: &[usize],
    instances: usize,
    eval_seed: u64,
) -> Result<PassAtKTable> {
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(GolfError::BadK { n, k });
    }
    let opts = SampleOpts::new(task.max_response_len, 1.0);
    let per_instance = par::map_range(instances, |j| -> Result<Vec<f64>> {
        let instance: Instance = generate_instance(task, eval_instance_seed(eval_seed, j))?;
        let g = sample_group(
            params,
            &instance.prompt,
            ContextId::Prompt(j as u64),
            GroupKind::Generation,
            task,
            &instance,
            n,
            &opts,
            seeds::derive(eval_seed, &[purpose::EVAL, j as u64, 1]),
        )?;
        Ok(g.rewards())
    });
    let mut sums = vec![0.0; ks.len()];
    let mut reward_sum = 0.0;
    for rewards in per_instance {
        let rewards = rewards?;
        let c = rewards.iter().filter(|&&r| r == 1.0).count();
        for (s, &k) in sums.iter_mut().zip(ks) {
            *s += pass_at_k(n, c, k)?;
        }
        reward_sum += avg_at_n(&rewards);
    }
    let denom = instances.max(1) as f64;
    Ok(PassAtKTable {
        instances,
        samples: n,
        ks: ks.to_vec(),
        pass_at_k: sums.into_iter().map(|s| s / denom).collect(),
        mean_reward: reward_sum / denom,
    })
}

pub const PASS_KS: [usize; 4] = [1, 2, 4, 8];

fn eval_ks(n: usize) -> Vec<usize> {
    PASS_KS.iter().copied().filter(|&k| k <= n).collect()
}

/// Writes `(value, newline)` and flushes.
fn append_line<T: Serialize>(w: &mut BufWriter<File>, path: &Path, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).expect("serializable record");
    writeln!(w, "{line}")
        .and_then(|_| w.flush())
        .map_err(|e| GolfError::io(path, e))
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| GolfError::io(path, e))?;
    Ok(BufWriter::new(f))
}

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
pub const SFT_FILE: &str = "sft_examples.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("step_{step:06}.ckpt"))
}

/// Trains for `config.steps` steps in `dir`, optionally continuing from a
/// checkpoint, then writes the final checkpoint and evaluation report.
pub fn run_experiment(config: &TrainConfig, dir: &Path, resume: Option<Checkpoint>) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("checkpoints")).map_err(|e| GolfError::io(dir, e))?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, config.to_text()).map_err(|e| GolfError::io(&cfg_path, e))?;

    let mut trainer = match resume {
        Some(ckpt) => Trainer::from_checkpoint(config.clone(), ckpt)?,
        None => Trainer::new(config.clone())?,
    };
    let metrics_path = dir.join(METRICS_FILE);
    let diag_path = dir.join(DIAGNOSTICS_FILE);
    let sft_path = dir.join(SFT_FILE);
    let mut metrics = open_log(&metrics_path, false)?;
    let mut diag = open_log(&diag_path, false)?;
    let mut sft = if config.off_policy == OffPolicyMode::Sft && config.algorithm == Algorithm::Golf {
        Some(open_log(&sft_path, false)?)
    } else {
        None
    };

    while trainer.step < config.steps {
        let out = match trainer.step() {
            Ok(out) => out,
            Err(e) => {
                let dump = dir.join("failure_dump.ckpt");
                trainer.checkpoint().save(&dump)?;
                return Err(e);
            }
        };
        append_line(&mut metrics, &metrics_path, &out.metrics)?;
        append_line(&mut diag, &diag_path, &out.diagnostics)?;
        if let Some(w) = sft.as_mut() {
            for ex in &out.sft_examples {
                append_line(w, &sft_path, &serde_json::json!({ "step": out.metrics.step, "example": ex }))?;
            }
        }
        if config.checkpoint_every > 0 && trainer.step % config.checkpoint_every == 0 {
            trainer.checkpoint().save(&checkpoint_path(dir, trainer.step))?;
        }
    }
    trainer.checkpoint().save(&dir.join(FINAL_CHECKPOINT))?;

    let table = eval_pass_at_k(
        &trainer.params,
        &config.task,
        config.eval_samples,
        &eval_ks(config.eval_samples),
        config.eval_instances,
        config.eval_seed,
    )?;
    let eval_path = dir.join(EVAL_FILE);
    let text = serde_json::to_string_pretty(&table).expect("serializable table");
    fs::write(&eval_path, text + "\n").map_err(|e| GolfError::io(&eval_path, e))?;
    Ok(dir.to_path_buf())
}

pub fn read_metrics(dir: &Path) -> Result<Vec<MetricsRecord>> {
    let path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| GolfError::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| GolfError::Config(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn read_eval(dir: &Path) -> Result<PassAtKTable> {
    let path = dir.join(EVAL_FILE);
    let text = fs::read_to_string(&path).map_err(|e| GolfError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| GolfError::Config(format!("{}: {e}", path.display())))
}

/// Trailing window for [`steps_to_threshold`]. A single step's batch is too
/// small to say the policy has reached a reward level.
pub const REACH_WINDOW: usize = 10;

/// First step at which the mean training reward over the trailing
/// [`REACH_WINDOW`] steps reaches `threshold`.
pub fn steps_to_threshold(metrics: &[MetricsRecord], threshold: f64) -> Option<u64> {
    metrics
        .windows(REACH_WINDOW)
        .find(|w| avg_at_n(&w.iter().map(|m| m.mean_reward).collect::<Vec<_>>()) >= threshold)
        .map(|w| w[REACH_WINDOW - 1].step)
}

/// Mean of `f` over records with `from <= step < to`.
pub fn window_mean(metrics: &[MetricsRecord], from: u64, to: u64, f: impl Fn(&MetricsRecord) -> f64) -> f64 {
    let xs: Vec<f64> = metrics.iter().filter(|m| m.step >= from && m.step < to).map(f).collect();
    avg_at_n(&xs)
}

/// The compared training variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    GolfMixed,
    GolfExternalOnly,
    GolfIntraOnly,
    GolfAlwaysInject,
    GolfSft,
    DrGrpo,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::GolfMixed,
        Variant::GolfExternalOnly,
        Variant::GolfIntraOnly,
        Variant::GolfAlwaysInject,
        Variant::GolfSft,
        Variant::DrGrpo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::GolfMixed => "golf-mixed",
            Variant::GolfExternalOnly => "golf-external-only",
            Variant::GolfIntraOnly => "golf-intra-only",
            Variant::GolfAlwaysInject => "golf-always-inject",
            Variant::GolfSft => "golf-sft",
            Variant::DrGrpo => "dr_grpo",
        }
    }

    pub fn configure(self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let mut c = base.clone();
        c.seed = seed;
        c.algorithm = Algorithm::Golf;
        c.feedback = FeedbackMode::Mixed;
        c.injection = InjectionMode::Adaptive;
        c.off_policy = OffPolicyMode::MixedRl;
        match self {
            Variant::GolfMixed => {}
            Variant::GolfExternalOnly => c.feedback = FeedbackMode::External,
            Variant::GolfIntraOnly => c.feedback = FeedbackMode::Intra,
            Variant::GolfAlwaysInject => c.injection = InjectionMode::Always,
            Variant::GolfSft => c.off_policy = OffPolicyMode::Sft,
            Variant::DrGrpo => c.algorithm = Algorithm::DrGrpo,
        }
        c
    }
}

pub fn run_dir(root: &Path, variant: Variant, seed: u64) -> PathBuf {
    root.join(variant.name()).join(format!("seed{seed}"))
}

/// Runs every variant for every seed under `root` and writes `summary.tsv`.
pub fn run_ablation_suite(base: &TrainConfig, seeds: &[u64], root: &Path) -> Result<String> {
    if seeds.len() < 3 {
        return Err(GolfError::Config("the ablation suite needs at least 3 seeds".into()));
    }
    let jobs: Vec<(Variant, u64)> = Variant::ALL
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    par::map_ordered(&jobs, |&(v, s)| run_experiment(&v.configure(base, s), &run_dir(root, v, s), None))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize_ablation(root, seeds, base.success_threshold)?;
    let path = root.join("summary.tsv");
    fs::write(&path, &summary).map_err(|e| GolfError::io(&path, e))?;
    Ok(summary)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Summary table computed purely from stored run directories.
pub fn summarize_ablation(root: &Path, seeds: &[u64], threshold: f64) -> Result<String> {
    let mut out = String::from(
        "variant\tseeds\tfinal_mean_reward_median\tfinal_mean_reward_mean\tsteps_to_threshold_median\tzero_reward_ratio_mean\tentropy_mean\n",
    );
    for v in Variant::ALL {
        let mut finals = Vec::new();
        let mut reach = Vec::new();
        let mut zero = Vec::new();
        let mut ent = Vec::new();
        for &s in seeds {
            let dir = run_dir(root, v, s);
            let m = read_metrics(&dir)?;
            let e = read_eval(&dir)?;
            finals.push(e.mean_reward);
            reach.push(steps_to_threshold(&m, threshold).map_or(m.len() as f64, |x| x as f64));
            zero.push(avg_at_n(&m.iter().map(|r| r.zero_reward_ratio).collect::<Vec<_>>()));
            ent.push(avg_at_n(&m.iter().map(|r| r.entropy).collect::<Vec<_>>()));
        }
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.1}\t{:.6}\t{:.6}\n",
            v.name(),
            seeds.len(),
            median(&finals),
            avg_at_n(&finals),
            median(&reach),
            avg_at_n(&zero),
            avg_at_n(&ent),
        ));
    }
    Ok(out)
}

/// Fraction of zero-reward generation groups that an injection rescued.
pub fn rescued_fraction(rollouts: &[PromptRollout]) -> f64 {
    let zero: Vec<_> = rollouts.iter().filter(|r| is_zero_reward_group(&r.generation)).collect();
    if zero.is_empty() {
        return 0.0;
    }
    zero.iter().filter(|r| r.decision.triggered).count() as f64 / zero.len() as f64
}

/// Rollouts of one step without an update, for inspection and tests.
pub fn sample_step(cfg: &TrainConfig, params: &PolicyParams, step: u64) -> Result<Vec<PromptRollout>> {
    par::map_range(cfg.prompts_per_step, |i| rollout_prompt(cfg, params, step, i))
        .into_iter()
        .collect()
}
