//! Group-relative policy optimization with group-level natural-language
//! feedback, at toy scale.
//!
//! A tiny recurrent policy is trained on synthetic verifiable tasks. Failed
//! attempts and their critiques are aggregated into refinement contexts,
//! successful refinements are injected into low-reward rollout groups as
//! off-policy samples, and generation and refinement are optimized jointly.
//! Dr.GRPO, GRPO and several ablations share the same engine.

pub mod checkpoint;
pub mod config;
pub mod envs;
pub mod error;
pub mod golf;
pub mod grpo;
pub mod metrics;
pub mod par;
pub mod policy;
pub mod rollout;
pub mod seeds;
pub mod sft;
pub mod trainer;
pub mod types;
pub mod vocab;

pub use config::{Algorithm, OffPolicyMode, TrainConfig};
pub use error::{GolfError, Result};
