use std::path::PathBuf;

/// Errors raised anywhere in the training engine.
#[derive(Debug, thiserror::Error)]
pub enum GolfError {
    #[error("rollout group is empty")]
    EmptyGroup,
    #[error("reward {0} is not binary")]
    NonBinaryReward(f64),
    #[error("bad task spec: {0}")]
    BadTaskSpec(String),
    #[error("token {token} out of range for vocabulary of size {vocab}")]
    BadToken { token: u32, vocab: usize },
    #[error("shape mismatch: {0}")]
    BadShape(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("trajectory {0} has no behavior log-probabilities")]
    MissingBehavior(usize),
    #[error("no failures to aggregate")]
    NoFailures,
    #[error("refinement context of {len} tokens exceeds limit {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("no reward-0 member available for replacement")]
    NoFailureSlot,
    #[error("off-policy member {0} does not come from a refinement context")]
    BadProvenance(usize),
    #[error("groups come from different prompt instances ({0} vs {1})")]
    PromptMismatch(u64, u64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("k={k} invalid for n={n}")]
    BadK { n: usize, k: usize },
    #[error("no supervised examples")]
    NoExamples,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, GolfError>;

impl GolfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GolfError::IoFailure {
            path: path.into(),
            source,
        }
    }
}
