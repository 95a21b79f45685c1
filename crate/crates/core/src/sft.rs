//! Supervised-imitation baseline: maximize the likelihood of successful
//! refinements given the original prompt.

use serde::{Deserialize, Serialize};

use crate::error::{GolfError, Result};
use crate::policy::{GradAccumulator, PolicyParams};
use crate::types::TokenSeq;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    /// The original task prompt, not the refinement context.
    pub context: TokenSeq,
    /// A refinement that scored 1 when it was collected.
    pub target: TokenSeq,
}

/// `loss = −coefficient · mean_e( mean_t log π(target_t | context, target_<t) )`.
///
/// The gradient of `−loss` (the ascent direction) is added into `acc`, so it
/// composes with the RL objectives that share the accumulator.
pub fn sft_loss_and_grad(params: &PolicyParams, examples: &[SftExample], coefficient: f64, acc: &mut GradAccumulator) -> Result<f64> {
    if examples.is_empty() {
        return Err(GolfError::NoExamples);
    }
    if coefficient == 0.0 {
        return Ok(0.0);
    }
    let scale = coefficient / examples.len() as f64;
    let mut dh = vec![0.0; params.dims().d_h];
    let mut loglik = 0.0;
    for ex in examples {
        let ctx = params.encode(ex.context.tokens())?;
        let trace = params.trace(&ctx, ex.target.tokens())?;
        let len = ex.target.len() as f64;
        loglik += trace.logprobs().iter().sum::<f64>() / len;
        let weights = vec![scale / len; ex.target.len()];
        dh.iter_mut().for_each(|x| *x = 0.0);
        params.backprop_response(&trace, &weights, acc.as_mut_slice(), &mut dh);
        params.backprop_context(&ctx, &dh, acc.as_mut_slice());
    }
    Ok(-coefficient * loglik / examples.len() as f64)
}
