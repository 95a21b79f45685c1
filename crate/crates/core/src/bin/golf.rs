use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use golf_rl::checkpoint::{read_header_from, Checkpoint};
use golf_rl::trainer::{self, PASS_KS};
use golf_rl::{GolfError, Result, TrainConfig};

#[derive(Parser)]
#[command(name = "golf", about = "Group-level feedback RL on synthetic verifiable tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// `--key=value` config overrides.
        #[arg(last = true)]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on held-out instances.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(last = true)]
        overrides: Vec<String>,
    },
    /// pass@k table for a checkpoint.
    Passk {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(last = true)]
        overrides: Vec<String>,
    },
    /// Run every ablation variant over several seeds and summarize.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(last = true)]
        overrides: Vec<String>,
    },
    /// Re-print the summary of a finished ablation directory.
    Summarize {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Print a checkpoint's header and sizes.
    InspectCheckpoint { path: PathBuf },
}

fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}

fn print_table(t: &trainer::PassAtKTable) {
    println!("instances\t{}\nsamples\t{}\nmean_reward\t{:.6}", t.instances, t.samples, t.mean_reward);
    for (k, p) in t.ks.iter().zip(&t.pass_at_k) {
        println!("pass@{k}\t{p:.6}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            out,
            resume,
            overrides,
        } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            let resume = resume.as_deref().map(Checkpoint::load).transpose()?;
            trainer::run_experiment(&cfg, &out, resume)?;
            print_table(&trainer::read_eval(&out)?);
        }
        Command::Eval {
            config,
            checkpoint,
            overrides,
        } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let ks: Vec<usize> = PASS_KS.iter().copied().filter(|&k| k <= cfg.eval_samples).collect();
            let t = trainer::eval_pass_at_k(&ckpt.params, &cfg.task, cfg.eval_samples, &ks, cfg.eval_instances, cfg.eval_seed)?;
            print_table(&t);
        }
        Command::Passk {
            config,
            checkpoint,
            n,
            k,
            overrides,
        } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let ks = if k.is_empty() { vec![1, n] } else { k };
            let t = trainer::eval_pass_at_k(&ckpt.params, &cfg.task, n, &ks, cfg.eval_instances, cfg.eval_seed)?;
            print_table(&t);
        }
        Command::Ablate {
            config,
            out,
            seeds,
            overrides,
        } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            print!("{}", trainer::run_ablation_suite(&cfg, &seeds, &out)?);
        }
        Command::Summarize { dir, seeds, threshold } => {
            print!("{}", trainer::summarize_ablation(&dir, &seeds, threshold)?);
        }
        Command::InspectCheckpoint { path } => {
            let h = read_header_from(&path)?;
            let ckpt = Checkpoint::load(&path)?;
            println!("version\t{}", h.version);
            println!("vocab\t{}\nd_emb\t{}\nd_h\t{}", h.dims.vocab, h.dims.d_emb, h.dims.d_h);
            println!("params\t{}", h.dims.param_count());
            println!("optimizer_step\t{}", ckpt.optimizer.step);
            println!("trainer_step\t{}", ckpt.trainer_step);
            if !ckpt.params.is_finite() {
                return Err(GolfError::Checkpoint("non-finite parameters".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
