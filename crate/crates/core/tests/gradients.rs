mod common;

use common::*;
use golf_rl::golf::{batch_objective, mixed_objective};
use golf_rl::grpo::{grpo_objective, AdvantageMode, SurrogateOpts};
use golf_rl::policy::accumulate_weighted_logprob_grad;
use golf_rl::policy::logprobs;
use golf_rl::sft::sft_loss_and_grad;
use rand::Rng;

const CASES: u64 = 20;

#[test]
fn weighted_logprob_matches_finite_differences() {
    for case in 0..CASES {
        let mut r = rng(case);
        let p = random_params(tiny_dims(), &mut r);
        let ctx = seq(&mut r, 10, 1, 5);
        let resp = seq(&mut r, 10, 1, 5);
        let w: Vec<f64> = (0..resp.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let err = check_gradient(&p, |q, acc| {
            accumulate_weighted_logprob_grad(q, &ctx, &resp, &w, acc).unwrap();
            logprobs(q, &ctx, &resp).unwrap().iter().zip(&w).map(|(l, w)| l * w).sum()
        });
        assert!(err < FD_TOLERANCE, "case {case}: {err:e}");
    }
}

#[test]
fn grpo_objective_matches_finite_differences() {
    for mode in [AdvantageMode::Grpo, AdvantageMode::DrGrpo] {
        for case in 0..CASES {
            let mut r = rng(100 + case);
            let old = random_params(tiny_dims(), &mut r);
            let groups: Vec<_> = (0..3).map(|i| random_group(&old, i, 4, &mut r)).collect();
            let p = perturb(&old, 0.01, &mut r);
            let err = check_gradient(&p, |q, acc| grpo_objective(q, &groups, 0.2, mode, acc).unwrap());
            assert!(err < FD_TOLERANCE, "{mode} case {case}: {err:e}");
        }
    }
}

#[test]
fn mixed_objective_matches_finite_differences() {
    for clip_off_policy in [false, true] {
        let opts = SurrogateOpts {
            clip_off_policy,
            ..Default::default()
        };
        for case in 0..CASES {
            let mut r = rng(200 + case);
            let old = random_params(tiny_dims(), &mut r);
            let (aug, _) = random_injected_pair(&old, 0, 4, &mut r);
            let groups = vec![aug, random_group(&old, 1, 4, &mut r)];
            let p = perturb(&old, 0.01, &mut r);
            let err = check_gradient(&p, |q, acc| mixed_objective(q, &groups, &opts, acc).unwrap().total);
            assert!(err < FD_TOLERANCE, "clip {clip_off_policy} case {case}: {err:e}");
        }
    }
}

#[test]
fn joint_batch_matches_finite_differences() {
    for case in 0..CASES {
        let mut r = rng(300 + case);
        let old = random_params(tiny_dims(), &mut r);
        let (aug, refinement) = random_injected_pair(&old, 0, 4, &mut r);
        let batches = vec![joint(&aug, &refinement)];
        let p = perturb(&old, 0.01, &mut r);
        let err = check_gradient(&p, |q, acc| batch_objective(q, &batches, &SurrogateOpts::default(), acc).unwrap().total);
        assert!(err < FD_TOLERANCE, "case {case}: {err:e}");
    }
}

#[test]
fn sft_loss_matches_finite_differences() {
    for case in 0..CASES {
        let mut r = rng(400 + case);
        let p = random_params(tiny_dims(), &mut r);
        let examples = random_sft_examples(10, &mut r);
        // The accumulator receives the ascent direction of -loss.
        let err = check_gradient(&p, |q, acc| -sft_loss_and_grad(q, &examples, 0.1, acc).unwrap());
        assert!(err < FD_TOLERANCE, "case {case}: {err:e}");
    }
}

#[test]
fn sft_gradient_scales_with_coefficient() {
    let mut r = rng(7);
    let p = random_params(tiny_dims(), &mut r);
    let examples = random_sft_examples(10, &mut r);
    let mut a = golf_rl::policy::GradAccumulator::zeros(p.dims());
    let mut b = golf_rl::policy::GradAccumulator::zeros(p.dims());
    sft_loss_and_grad(&p, &examples, 0.1, &mut a).unwrap();
    sft_loss_and_grad(&p, &examples, 0.2, &mut b).unwrap();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert_eq!(2.0 * x, *y);
    }
}
