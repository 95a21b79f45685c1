//! Tiny autoregressive policy: token embedding, one tanh recurrent layer and
//! a softmax output head, with hand-written reverse-mode gradients.
//!
//! All parameters live in one flat `Vec<f64>` in declaration order
//! (embedding, input weights, recurrent weights, hidden bias, output weights,
//! output bias). The same layout is used by [`GradAccumulator`], the Adam
//! moments and the checkpoint file.
//!
//! Scoring a response is split in two so that a group of responses sharing a
//! context pays for the context once: [`PolicyParams::encode`] runs the
//! recurrent layer over the context, [`PolicyParams::trace`] continues from
//! the encoded state over one response. Backpropagation mirrors the split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GolfError, Result};
use crate::types::TokenSeq;
use crate::vocab::{Token, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub vocab: usize,
    pub d_emb: usize,
    pub d_h: usize,
}

impl Default for PolicyDims {
    fn default() -> Self {
        PolicyDims {
            vocab: crate::vocab::VOCAB_SIZE,
            d_emb: 32,
            d_h: 64,
        }
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    emb: usize,
    w_in: usize,
    w_rec: usize,
    b_h: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl PolicyDims {
    fn layout(&self) -> Layout {
        let emb = 0;
        let w_in = emb + self.vocab * self.d_emb;
        let w_rec = w_in + self.d_h * self.d_emb;
        let b_h = w_rec + self.d_h * self.d_h;
        let w_out = b_h + self.d_h;
        let b_out = w_out + self.vocab * self.d_h;
        let total = b_out + self.vocab;
        Layout {
            emb,
            w_in,
            w_rec,
            b_h,
            w_out,
            b_out,
            total,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// Tensor names and element counts in declaration order.
    pub fn tensors(&self) -> [(&'static str, usize); 6] {
        [
            ("embedding", self.vocab * self.d_emb),
            ("w_in", self.d_h * self.d_emb),
            ("w_rec", self.d_h * self.d_h),
            ("b_h", self.d_h),
            ("w_out", self.vocab * self.d_h),
            ("b_out", self.vocab),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    dims: PolicyDims,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradAccumulator {
    data: Vec<f64>,
}

impl GradAccumulator {
    pub fn zeros(dims: PolicyDims) -> Self {
        GradAccumulator {
            data: vec![0.0; dims.param_count()],
        }
    }

    pub fn zero(&mut self) {
        self.data.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradAccumulator, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&g| g == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

impl PolicyParams {
    pub fn zeros(dims: PolicyDims) -> Self {
        PolicyParams {
            dims,
            data: vec![0.0; dims.param_count()],
        }
    }

    /// Seeded initialization. The output head starts small so the initial
    /// policy is close to uniform over the vocabulary.
    pub fn init(dims: PolicyDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(dims);
        let l = dims.layout();
        let mut fill = |range: std::ops::Range<usize>, scale: f64, data: &mut [f64]| {
            for x in &mut data[range] {
                *x = scale * (2.0 * rng.gen::<f64>() - 1.0);
            }
        };
        fill(l.emb..l.w_in, 1.0, &mut p.data);
        fill(l.w_in..l.w_rec, 1.0 / (dims.d_emb as f64).sqrt(), &mut p.data);
        fill(l.w_rec..l.b_h, 1.0 / (dims.d_h as f64).sqrt(), &mut p.data);
        fill(l.w_out..l.b_out, 0.1 / (dims.d_h as f64).sqrt(), &mut p.data);
        p
    }

    pub fn from_vec(dims: PolicyDims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.param_count() {
            return Err(GolfError::BadShape(format!(
                "expected {} parameters, got {}",
                dims.param_count(),
                data.len()
            )));
        }
        Ok(PolicyParams { dims, data })
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.dims.vocab) {
            Some(&token) => Err(GolfError::BadToken {
                token,
                vocab: self.dims.vocab,
            }),
            None => Ok(()),
        }
    }

    /// `h_next = tanh(W_in e[token] + W_rec h + b_h)`.
    fn cell(&self, token: Token, h: &[f64], out: &mut [f64]) {
        let d = self.dims;
        let l = d.layout();
        let e = &self.data[l.emb + token as usize * d.d_emb..][..d.d_emb];
        let w_in = &self.data[l.w_in..l.w_rec];
        let w_rec = &self.data[l.w_rec..l.b_h];
        let b_h = &self.data[l.b_h..l.w_out];
        for (i, o) in out.iter_mut().enumerate() {
            let a = dot(&w_in[i * d.d_emb..][..d.d_emb], e) + dot(&w_rec[i * d.d_h..][..d.d_h], h) + b_h[i];
            *o = a.tanh();
        }
    }

    fn logits(&self, h: &[f64], out: &mut [f64]) {
        let d = self.dims;
        let l = d.layout();
        let w_out = &self.data[l.w_out..l.b_out];
        let b_out = &self.data[l.b_out..l.total];
        for (v, o) in out.iter_mut().enumerate() {
            *o = dot(&w_out[v * d.d_h..][..d.d_h], h) + b_out[v];
        }
    }

    /// Runs the recurrent layer over a nonempty context.
    pub fn encode(&self, context: &[Token]) -> Result<EncodedContext> {
        if context.is_empty() {
            return Err(GolfError::BadShape("empty context".into()));
        }
        self.check_tokens(context)?;
        let d_h = self.dims.d_h;
        let mut hidden = vec![0.0; context.len() * d_h];
        let zero = vec![0.0; d_h];
        for (i, &tok) in context.iter().enumerate() {
            let (done, rest) = hidden.split_at_mut(i * d_h);
            let prev = if i == 0 { &zero[..] } else { &done[(i - 1) * d_h..] };
            self.cell(tok, prev, &mut rest[..d_h]);
        }
        Ok(EncodedContext {
            tokens: context.to_vec(),
            hidden,
            d_h,
        })
    }

    /// Teacher-forced pass over `response` starting from an encoded context.
    pub fn trace(&self, ctx: &EncodedContext, response: &[Token]) -> Result<ResponseTrace> {
        if response.is_empty() {
            return Err(GolfError::BadShape("empty response".into()));
        }
        self.check_tokens(response)?;
        let d = self.dims;
        let n = response.len();
        let mut hidden = vec![0.0; n * d.d_h];
        hidden[..d.d_h].copy_from_slice(ctx.last());
        let mut probs = vec![0.0; n * d.vocab];
        let mut logprobs = Vec::with_capacity(n);
        for t in 0..n {
            if t > 0 {
                let (done, rest) = hidden.split_at_mut(t * d.d_h);
                self.cell(response[t - 1], &done[(t - 1) * d.d_h..], &mut rest[..d.d_h]);
            }
            let row = &mut probs[t * d.vocab..][..d.vocab];
            self.logits(&hidden[t * d.d_h..][..d.d_h], row);
            log_softmax_in_place(row);
            logprobs.push(row[response[t] as usize]);
            for p in row.iter_mut() {
                *p = p.exp();
            }
        }
        Ok(ResponseTrace {
            tokens: response.to_vec(),
            hidden,
            probs,
            logprobs,
            vocab: d.vocab,
        })
    }

    /// Adds `d/dθ Σ_t w_t log π(y_t | ·)` for the response part into `grad`
    /// and the gradient with respect to the context's final hidden state
    /// into `dh_context`.
    pub fn backprop_response(&self, trace: &ResponseTrace, weights: &[f64], grad: &mut [f64], dh_context: &mut [f64]) {
        let d = self.dims;
        let l = d.layout();
        let n = trace.tokens.len();
        debug_assert_eq!(weights.len(), n);
        debug_assert_eq!(grad.len(), l.total);
        let mut g = vec![0.0; d.d_h];
        let mut dlogits = vec![0.0; d.vocab];
        let mut dprev = vec![0.0; d.d_h];
        for j in (0..n).rev() {
            // Output head for step j (distribution of y_j given H[j]).
            let h = &trace.hidden[j * d.d_h..][..d.d_h];
            let w = weights[j];
            if w != 0.0 {
                let p = &trace.probs[j * d.vocab..][..d.vocab];
                for (dl, &pv) in dlogits.iter_mut().zip(p) {
                    *dl = -w * pv;
                }
                dlogits[trace.tokens[j] as usize] += w;
                {
                    let (head, tail) = grad.split_at_mut(l.b_out);
                    outer_add(&mut head[l.w_out..], &dlogits, h);
                    axpy(&mut tail[..d.vocab], 1.0, &dlogits);
                }
                let w_out = &self.data[l.w_out..l.b_out];
                for (v, &dl) in dlogits.iter().enumerate() {
                    axpy(&mut g, dl, &w_out[v * d.d_h..][..d.d_h]);
                }
            }
            if j == 0 {
                axpy(dh_context, 1.0, &g);
            } else {
                let h_prev = &trace.hidden[(j - 1) * d.d_h..][..d.d_h];
                self.cell_backward(trace.tokens[j - 1], h_prev, h, &g, grad, &mut dprev);
                std::mem::swap(&mut g, &mut dprev);
            }
        }
    }

    /// Continues backpropagation from the context's final hidden state.
    pub fn backprop_context(&self, ctx: &EncodedContext, dh_last: &[f64], grad: &mut [f64]) {
        let d_h = self.dims.d_h;
        let m = ctx.tokens.len();
        let zero = vec![0.0; d_h];
        let mut g = dh_last.to_vec();
        let mut dprev = vec![0.0; d_h];
        for i in (0..m).rev() {
            let h = &ctx.hidden[i * d_h..][..d_h];
            let h_prev = if i == 0 { &zero[..] } else { &ctx.hidden[(i - 1) * d_h..][..d_h] };
            self.cell_backward(ctx.tokens[i], h_prev, h, &g, grad, &mut dprev);
            std::mem::swap(&mut g, &mut dprev);
        }
    }

    /// Backward through one recurrent cell given `dh` on its output; writes
    /// the gradient for the previous hidden state into `dh_prev`.
    fn cell_backward(&self, token: Token, h_prev: &[f64], h: &[f64], dh: &[f64], grad: &mut [f64], dh_prev: &mut [f64]) {
        let d = self.dims;
        let l = d.layout();
        let mut da = vec![0.0; d.d_h];
        for ((a, &g), &hv) in da.iter_mut().zip(dh).zip(h) {
            *a = g * (1.0 - hv * hv);
        }
        let tok = token as usize;
        let e = &self.data[l.emb + tok * d.d_emb..][..d.d_emb];
        let w_in = &self.data[l.w_in..l.w_rec];
        let w_rec = &self.data[l.w_rec..l.b_h];

        let (g_emb, rest) = grad.split_at_mut(l.w_in);
        let (g_w_in, rest) = rest.split_at_mut(l.w_rec - l.w_in);
        let (g_w_rec, rest) = rest.split_at_mut(l.b_h - l.w_rec);
        let g_b_h = &mut rest[..d.d_h];

        outer_add(g_w_in, &da, e);
        outer_add(g_w_rec, &da, h_prev);
        axpy(g_b_h, 1.0, &da);
        let g_e = &mut g_emb[tok * d.d_emb..][..d.d_emb];
        dh_prev.iter_mut().for_each(|x| *x = 0.0);
        for (i, &a) in da.iter().enumerate() {
            if a != 0.0 {
                axpy(g_e, a, &w_in[i * d.d_emb..][..d.d_emb]);
                axpy(dh_prev, a, &w_rec[i * d.d_h..][..d.d_h]);
            }
        }
    }

    /// Samples one response continuing from an encoded context.
    pub fn sample_from(&self, ctx: &EncodedContext, opts: &SampleOpts, rng_seed: u64) -> (TokenSeq, Vec<f64>) {
        let d = self.dims;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut h = ctx.last().to_vec();
        let mut next = vec![0.0; d.d_h];
        let mut logits = vec![0.0; d.vocab];
        let mut scaled = vec![0.0; d.vocab];
        let mut tokens = Vec::with_capacity(opts.max_len);
        let mut logprobs = Vec::with_capacity(opts.max_len);
        while tokens.len() < opts.max_len {
            self.logits(&h, &mut logits);
            let tok = if opts.greedy {
                argmax(&logits)
            } else {
                scaled.iter_mut().zip(&logits).for_each(|(s, &l)| *s = l / opts.temperature);
                log_softmax_in_place(&mut scaled);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = d.vocab - 1;
                for (v, &lp) in scaled.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        pick = v;
                        break;
                    }
                }
                pick
            };
            log_softmax_in_place(&mut logits);
            logprobs.push(logits[tok]);
            let tok = tok as Token;
            tokens.push(tok);
            if tok == EOS {
                break;
            }
            self.cell(tok, &h, &mut next);
            std::mem::swap(&mut h, &mut next);
        }
        (TokenSeq::from_vec(tokens), logprobs)
    }
}

/// Hidden states after each context token.
#[derive(Debug, Clone)]
pub struct EncodedContext {
    tokens: Vec<Token>,
    hidden: Vec<f64>,
    d_h: usize,
}

impl EncodedContext {
    pub fn last(&self) -> &[f64] {
        &self.hidden[self.hidden.len() - self.d_h..]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Teacher-forced forward record for one response.
#[derive(Debug, Clone)]
pub struct ResponseTrace {
    tokens: Vec<Token>,
    /// Hidden state feeding the output head at each step.
    hidden: Vec<f64>,
    probs: Vec<f64>,
    logprobs: Vec<f64>,
    vocab: usize,
}

impl ResponseTrace {
    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn probs(&self, step: usize) -> &[f64] {
        &self.probs[step * self.vocab..][..self.vocab]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn entropies(&self) -> Vec<f64> {
        (0..self.len())
            .map(|t| {
                self.probs(t)
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| -p * p.ln())
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOpts {
    pub max_len: usize,
    pub temperature: f64,
    /// Argmax decoding, the zero-temperature limit.
    pub greedy: bool,
}

impl SampleOpts {
    pub fn new(max_len: usize, temperature: f64) -> Self {
        SampleOpts {
            max_len,
            temperature,
            greedy: false,
        }
    }
}

pub fn logprobs(params: &PolicyParams, context: &TokenSeq, response: &TokenSeq) -> Result<Vec<f64>> {
    let ctx = params.encode(context.tokens())?;
    Ok(params.trace(&ctx, response.tokens())?.logprobs)
}

pub fn sample(params: &PolicyParams, context: &TokenSeq, opts: &SampleOpts, rng_seed: u64) -> Result<(TokenSeq, Vec<f64>)> {
    if !opts.greedy && !(opts.temperature > 0.0 && opts.temperature.is_finite()) {
        return Err(GolfError::Config(format!("temperature must be > 0, got {}", opts.temperature)));
    }
    let ctx = params.encode(context.tokens())?;
    Ok(params.sample_from(&ctx, opts, rng_seed))
}

pub fn token_entropies(params: &PolicyParams, context: &TokenSeq, response: &TokenSeq) -> Result<Vec<f64>> {
    let ctx = params.encode(context.tokens())?;
    Ok(params.trace(&ctx, response.tokens())?.entropies())
}

/// Per-step next-token distributions under teacher forcing.
pub fn step_distributions(params: &PolicyParams, context: &TokenSeq, response: &TokenSeq) -> Result<Vec<Vec<f64>>> {
    let ctx = params.encode(context.tokens())?;
    let trace = params.trace(&ctx, response.tokens())?;
    Ok((0..trace.len()).map(|t| trace.probs(t).to_vec()).collect())
}

/// Adds `∂/∂θ Σ_t w_t log π_θ(y_t | context, y_<t)` into `acc`. Weights are constants.
pub fn accumulate_weighted_logprob_grad(
    params: &PolicyParams,
    context: &TokenSeq,
    response: &TokenSeq,
    weights: &[f64],
    acc: &mut GradAccumulator,
) -> Result<()> {
    if weights.len() != response.len() {
        return Err(GolfError::BadShape(format!(
            "{} weights for {} tokens",
            weights.len(),
            response.len()
        )));
    }
    if acc.data.len() != params.data.len() {
        return Err(GolfError::BadShape("accumulator does not match parameters".into()));
    }
    let ctx = params.encode(context.tokens())?;
    let trace = params.trace(&ctx, response.tokens())?;
    let mut dh = vec![0.0; params.dims.d_h];
    params.backprop_response(&trace, weights, &mut acc.data, &mut dh);
    params.backprop_context(&ctx, &dh, &mut acc.data);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(dims: PolicyDims, lr: f64) -> Self {
        let n = dims.param_count();
        OptimizerState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update that ascends the objective whose gradient is in
/// `acc`. An exactly-zero gradient leaves parameters and moments untouched.
pub fn adam_step(params: &mut PolicyParams, acc: &GradAccumulator, state: &mut OptimizerState) -> Result<()> {
    let n = params.data.len();
    if acc.data.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(GolfError::BadShape("optimizer state does not match parameters".into()));
    }
    if acc.data.iter().any(|g| !g.is_finite()) {
        return Err(GolfError::NonFiniteGradient);
    }
    if acc.is_zero() {
        return Ok(());
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..n {
        let g = acc.data[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params.data[i] += state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `m += u ⊗ v` for a row-major `u.len() × v.len()` matrix.
#[inline]
fn outer_add(m: &mut [f64], u: &[f64], v: &[f64]) {
    let cols = v.len();
    for (row, &ui) in m.chunks_exact_mut(cols).zip(u) {
        if ui != 0.0 {
            axpy(row, ui, v);
        }
    }
}

/// Replaces logits by log-probabilities; returns the log-normalizer.
fn log_softmax_in_place(x: &mut [f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = x.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    x.iter_mut().for_each(|v| *v -= lse);
    lse
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::VOCAB_SIZE;
    use proptest::prelude::*;

    fn tiny() -> PolicyDims {
        PolicyDims { vocab: 8, d_emb: 4, d_h: 6 }
    }

    fn seq(t: &[Token]) -> TokenSeq {
        TokenSeq::from_vec(t.to_vec())
    }

    #[test]
    fn default_size_is_small() {
        let n = PolicyDims::default().param_count();
        assert_eq!(n, 64 * 32 + 64 * 32 + 64 * 64 + 64 + 64 * 64 + 64);
        assert!(n < 100_000);
        assert!(tiny().param_count() <= 500);
    }

    #[test]
    fn uniform_params_give_minus_log_v() {
        let p = PolicyParams::zeros(PolicyDims::default());
        let lp = logprobs(&p, &seq(&[1, 2, 3]), &seq(&[4, 5, 6, 7])).unwrap();
        for v in lp {
            assert!((v + (VOCAB_SIZE as f64).ln()).abs() < 1e-15);
        }
        let ent = token_entropies(&p, &seq(&[1]), &seq(&[4, 5])).unwrap();
        for h in ent {
            assert!((h - 64f64.ln()).abs() < 1e-12);
            assert!((h - 4.1589).abs() < 1e-4);
        }
    }

    #[test]
    fn saturated_logit_has_zero_entropy() {
        let dims = tiny();
        let mut p = PolicyParams::zeros(dims);
        let l = dims.layout();
        p.data[l.b_out + 3] = 1e4;
        let ent = token_entropies(&p, &seq(&[1]), &seq(&[3, 3])).unwrap();
        assert!(ent.iter().all(|&h| h.abs() < 1e-300));
    }

    #[test]
    fn bad_tokens_and_shapes() {
        let p = PolicyParams::zeros(tiny());
        assert!(matches!(logprobs(&p, &seq(&[9]), &seq(&[1])), Err(GolfError::BadToken { token: 9, .. })));
        assert!(matches!(logprobs(&p, &seq(&[1]), &seq(&[8])), Err(GolfError::BadToken { .. })));
        assert!(matches!(logprobs(&p, &seq(&[]), &seq(&[1])), Err(GolfError::BadShape(_))));
        let mut acc = GradAccumulator::zeros(tiny());
        assert!(matches!(
            accumulate_weighted_logprob_grad(&p, &seq(&[1]), &seq(&[1, 2]), &[1.0], &mut acc),
            Err(GolfError::BadShape(_))
        ));
    }

    #[test]
    fn sampled_logprobs_round_trip() {
        let p = PolicyParams::init(PolicyDims::default(), 3);
        let ctx = seq(&[30, 2, 26, 3, 29]);
        for seed in 0..20 {
            let (resp, lp) = sample(&p, &ctx, &SampleOpts::new(12, 0.7), seed).unwrap();
            let re = logprobs(&p, &ctx, &resp).unwrap();
            assert_eq!(lp.len(), resp.len());
            for (a, b) in lp.iter().zip(&re) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = PolicyParams::init(PolicyDims::default(), 5);
        let ctx = seq(&[30, 1]);
        let opts = SampleOpts::new(10, 1.0);
        assert_eq!(sample(&p, &ctx, &opts, 9).unwrap(), sample(&p, &ctx, &opts, 9).unwrap());
    }

    #[test]
    fn greedy_takes_argmax() {
        let p = PolicyParams::init(PolicyDims::default(), 11);
        let ctx = seq(&[30, 4, 26, 4, 29]);
        let opts = SampleOpts { max_len: 6, temperature: 1.0, greedy: true };
        let (resp, _) = sample(&p, &ctx, &opts, 0).unwrap();
        let dists = step_distributions(&p, &ctx, &resp).unwrap();
        for (t, dist) in dists.iter().enumerate() {
            let best = argmax(dist);
            assert_eq!(resp.tokens()[t] as usize, best);
        }
        // Seed does not matter for greedy decoding.
        assert_eq!(resp, sample(&p, &ctx, &opts, 77).unwrap().0);
    }

    #[test]
    fn uniform_first_token_frequencies() {
        let p = PolicyParams::zeros(PolicyDims::default());
        let ctx = seq(&[30]);
        let opts = SampleOpts::new(1, 1.0);
        let draws = 10_000usize;
        let mut counts = vec![0usize; VOCAB_SIZE];
        let enc = p.encode(ctx.tokens()).unwrap();
        for seed in 0..draws as u64 {
            let (resp, _) = p.sample_from(&enc, &opts, seed);
            counts[resp.tokens()[0] as usize] += 1;
        }
        let q = 1.0 / VOCAB_SIZE as f64;
        let sigma = (draws as f64 * q * (1.0 - q)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * q).abs() < 5.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn entropies_match_direct_sum() {
        let p = PolicyParams::init(PolicyDims::default(), 21);
        let ctx = seq(&[30, 38, 3, 29]);
        let resp = seq(&[10, 11, 12, 31]);
        let ent = token_entropies(&p, &ctx, &resp).unwrap();
        let dists = step_distributions(&p, &ctx, &resp).unwrap();
        for (h, dist) in ent.iter().zip(&dists) {
            let direct: f64 = dist.iter().map(|&q| -q * q.ln()).sum();
            assert!((h - direct).abs() < 1e-10);
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_leave_accumulator() {
        let p = PolicyParams::init(tiny(), 1);
        let mut acc = GradAccumulator::zeros(tiny());
        accumulate_weighted_logprob_grad(&p, &seq(&[1, 2]), &seq(&[3, 4]), &[0.0, 0.0], &mut acc).unwrap();
        assert!(acc.is_zero());
    }

    #[test]
    fn gradient_is_linear_in_weights() {
        let dims = PolicyDims::default();
        let p = PolicyParams::init(dims, 2);
        let (ctx, resp) = (seq(&[30, 5, 29]), seq(&[7, 8, 31]));
        let w = [0.3, -1.2, 0.5];
        let mut twice = GradAccumulator::zeros(dims);
        accumulate_weighted_logprob_grad(&p, &ctx, &resp, &w, &mut twice).unwrap();
        accumulate_weighted_logprob_grad(&p, &ctx, &resp, &w, &mut twice).unwrap();
        let mut once = GradAccumulator::zeros(dims);
        let w2: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        accumulate_weighted_logprob_grad(&p, &ctx, &resp, &w2, &mut once).unwrap();
        for (a, b) in twice.as_slice().iter().zip(once.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn adam_first_step_closed_form() {
        let dims = PolicyDims { vocab: 1, d_emb: 0, d_h: 0 };
        assert_eq!(dims.param_count(), 1);
        let mut p = PolicyParams::zeros(dims);
        let mut acc = GradAccumulator::zeros(dims);
        acc.as_mut_slice()[0] = 1.0;
        let mut st = OptimizerState::new(dims, 0.001);
        adam_step(&mut p, &acc, &mut st).unwrap();
        // m_hat = 1, v_hat = 1, step = lr / (1 + eps)
        assert!((p.as_slice()[0] - 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_and_nonfinite() {
        let dims = tiny();
        let mut p = PolicyParams::init(dims, 4);
        let before = p.clone();
        let mut st = OptimizerState::new(dims, 0.01);
        let mut acc = GradAccumulator::zeros(dims);
        adam_step(&mut p, &acc, &mut st).unwrap();
        assert_eq!(p, before);
        acc.as_mut_slice()[3] = f64::NAN;
        assert!(matches!(adam_step(&mut p, &acc, &mut st), Err(GolfError::NonFiniteGradient)));
        assert_eq!(p, before);
    }

    #[test]
    fn adam_is_deterministic() {
        let dims = tiny();
        let run = || {
            let mut p = PolicyParams::init(dims, 8);
            let mut st = OptimizerState::new(dims, 0.01);
            for k in 0..5 {
                let mut acc = GradAccumulator::zeros(dims);
                accumulate_weighted_logprob_grad(&p, &seq(&[1, 2]), &seq(&[3, (k % 8) as Token]), &[1.0, -0.5], &mut acc).unwrap();
                adam_step(&mut p, &acc, &mut st).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn snapshot_is_unaffected_by_updates() {
        let dims = tiny();
        let mut p = PolicyParams::init(dims, 6);
        let snapshot = p.clone();
        let frozen = snapshot.as_slice().to_vec();
        let mut acc = GradAccumulator::zeros(dims);
        accumulate_weighted_logprob_grad(&p, &seq(&[1]), &seq(&[2]), &[1.0], &mut acc).unwrap();
        let mut st = OptimizerState::new(dims, 0.1);
        adam_step(&mut p, &acc, &mut st).unwrap();
        assert_ne!(p.as_slice(), snapshot.as_slice());
        assert_eq!(snapshot.as_slice(), frozen.as_slice());
    }

    proptest! {
        #[test]
        fn logprobs_are_normalized(seed in 0u64..1000, ctx in proptest::collection::vec(0u32..8, 1..5), resp in proptest::collection::vec(0u32..8, 1..5)) {
            let p = PolicyParams::init(tiny(), seed);
            let lp = logprobs(&p, &seq(&ctx), &seq(&resp)).unwrap();
            let dists = step_distributions(&p, &seq(&ctx), &seq(&resp)).unwrap();
            for ((&l, dist), &tok) in lp.iter().zip(&dists).zip(&resp) {
                prop_assert!(l <= 0.0 && l.is_finite());
                prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!((l.exp() - dist[tok as usize]).abs() < 1e-12);
            }
        }
    }
}
