//! Soft-prompt tuning on a small frozen byte-level recurrent language model.
//!
//! The model reads `[soft prompt rows] ++ embed("[l]" BOS context) ++
//! embed(target[..T-1])` through an Elman recurrence
//! `s_t = tanh(W_x x_t + W_s s_{t-1} + b_s)` and predicts the next token from
//! `W_o s_t + b_o`. Only the prompt rows receive updates; the model is only
//! ever borrowed immutably by the trainer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Dataset, QaExample};
use crate::metrics::corpus_bleu;
use crate::par::{self, Execution};
use crate::{Error, Result};

pub type Token = u16;

pub const BOS: Token = 256;
pub const EOS: Token = 257;
pub const SEP: Token = 258;
pub const VOCAB_SIZE: usize = 259;

const ADAFACTOR_EPS: f64 = 1e-30;
const DECAY_EXPONENT: f64 = -0.8;

/// Frozen recurrent LM. All matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLm {
    pub d: usize,
    pub h: usize,
    pub seed: u64,
    /// `VOCAB_SIZE × d`
    pub embed: Vec<f64>,
    /// `h × d`
    pub w_x: Vec<f64>,
    /// `h × h`
    pub w_s: Vec<f64>,
    /// `VOCAB_SIZE × h`
    pub w_o: Vec<f64>,
    pub b_s: Vec<f64>,
    pub b_o: Vec<f64>,
}

const SELF_CONNECTION: f64 = 1.2;

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

impl ToyLm {
    /// Seeded random initialization. Each hidden unit has a self-connection
    /// of 1.2 plus small cross-talk, so the recurrence is bistable and the
    /// state reached at the end of the prompt persists through the context;
    /// inputs are weak and the readout is sharp.
    pub fn new(d: usize, h: usize, seed: u64) -> Self {
        assert!(d >= 1 && h >= 1, "model dimensions must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = uniform(&mut rng, VOCAB_SIZE * d, 1.0);
        let w_x = uniform(&mut rng, h * d, 0.1 * (3.0 / d as f64).sqrt());
        let mut w_s = uniform(&mut rng, h * h, 0.2 / (h as f64).sqrt());
        for i in 0..h {
            w_s[i * h + i] += SELF_CONNECTION;
        }
        let w_o = uniform(&mut rng, VOCAB_SIZE * h, 10.0 / (h as f64).sqrt());
        let b_s = uniform(&mut rng, h, 0.1);
        let b_o = uniform(&mut rng, VOCAB_SIZE, 0.5);
        ToyLm {
            d,
            h,
            seed,
            embed,
            w_x,
            w_s,
            w_o,
            b_s,
            b_o,
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (d, h, v) = (self.d, self.h, VOCAB_SIZE);
        let ok = self.embed.len() == v * d
            && self.w_x.len() == h * d
            && self.w_s.len() == h * h
            && self.w_o.len() == v * h
            && self.b_s.len() == h
            && self.b_o.len() == v;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("model parameter shapes are inconsistent"))
        }
    }

    /// SHA-256 over the dimensions and every parameter bit pattern.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.d as u64).to_le_bytes());
        hasher.update((self.h as u64).to_le_bytes());
        hasher.update(self.seed.to_le_bytes());
        for block in [&self.embed, &self.w_x, &self.w_s, &self.w_o, &self.b_s, &self.b_o] {
            for v in block.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    fn embedding(&self, token: Token) -> &[f64] {
        let t = token as usize;
        &self.embed[t * self.d..(t + 1) * self.d]
    }

    /// `next = tanh(W_x x + W_s prev + b_s)`
    fn step(&self, prev: &[f64], x: &[f64], next: &mut [f64]) {
        let (d, h) = (self.d, self.h);
        for i in 0..h {
            let wx = &self.w_x[i * d..(i + 1) * d];
            let ws = &self.w_s[i * h..(i + 1) * h];
            let mut acc = self.b_s[i];
            acc += wx.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            acc += ws.iter().zip(prev).map(|(w, v)| w * v).sum::<f64>();
            next[i] = acc.tanh();
        }
    }

    fn logits(&self, state: &[f64], out: &mut [f64]) {
        let h = self.h;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.w_o[k * h..(k + 1) * h];
            *o = self.b_o[k] + row.iter().zip(state).map(|(w, s)| w * s).sum::<f64>();
        }
    }
}

/// Trainable `m × d` prompt matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftPrompt {
    pub m: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl SoftPrompt {
    pub fn new(m: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("soft prompt length must be at least 1"));
        }
        if values.len() != m * d {
            return Err(Error::invalid(format!(
                "expected {} prompt values, got {}",
                m * d,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("soft prompt has non-finite entries"));
        }
        Ok(SoftPrompt { m, d, values })
    }

    /// Uniform(-0.5, 0.5) initialization.
    pub fn random(m: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SoftPrompt::new(m, d, uniform(&mut rng, m * d, 0.5))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    fn check_model(&self, model: &ToyLm) {
        assert_eq!(self.d, model.d, "prompt width must match the model embedding width");
    }
}

/// Header written before the raw prompt values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptHeader {
    pub m: usize,
    pub d: usize,
    pub seed: u64,
    pub config_hash: String,
    pub h: usize,
    pub model_seed: u64,
}

/// One JSON header line followed by `m * d` little-endian f64 values.
pub fn write_prompt(prompt: &SoftPrompt, header: &PromptHeader) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.push(b'\n');
    for v in &prompt.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_prompt(bytes: &[u8]) -> Result<(PromptHeader, SoftPrompt)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::invalid("prompt file has no header line"))?;
    let header: PromptHeader =
        serde_json::from_slice(&bytes[..split]).map_err(|e| crate::util::json_error(bytes, &e))?;
    let body = &bytes[split + 1..];
    if body.len() != header.m * header.d * 8 {
        return Err(Error::invalid(format!(
            "prompt body has {} bytes, header implies {}",
            body.len(),
            header.m * header.d * 8
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let prompt = SoftPrompt::new(header.m, header.d, values)?;
    Ok((header, prompt))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub input: Vec<Token>,
    pub target: Vec<Token>,
}

fn bytes_to_tokens(bytes: &[u8]) -> impl Iterator<Item = Token> + '_ {
    bytes.iter().map(|&b| Token::from(b))
}

/// `"[l]" BOS context` as model input.
pub fn encode_context(language: &str, context: &str) -> Vec<Token> {
    let prefix = format!("[{language}]");
    bytes_to_tokens(prefix.as_bytes())
        .chain(std::iter::once(BOS))
        .chain(bytes_to_tokens(context.as_bytes()))
        .collect()
}

/// Input `"[l]" BOS c`, target `a SEP q EOS`.
pub fn encode_example(example: &QaExample) -> Result<EncodedExample> {
    if example.context.is_empty() || example.question.is_empty() || example.answer.is_empty() {
        return Err(Error::invalid(format!("example {:?} has an empty field", example.id)));
    }
    let target = bytes_to_tokens(example.answer.as_bytes())
        .chain(std::iter::once(SEP))
        .chain(bytes_to_tokens(example.question.as_bytes()))
        .chain(std::iter::once(EOS))
        .collect();
    Ok(EncodedExample {
        input: encode_context(example.language.as_str(), &example.context),
        target,
    })
}

/// Splits a decoded target at its first SEP into (answer bytes, question bytes).
/// Returns `None` without SEP or if either side holds a non-byte token.
pub fn split_at_sep(tokens: &[Token]) -> Option<(Vec<u8>, Vec<u8>)> {
    let sep = tokens.iter().position(|&t| t == SEP)?;
    let to_bytes = |ts: &[Token]| -> Option<Vec<u8>> { ts.iter().map(|&t| u8::try_from(t).ok()).collect() };
    let rest = &tokens[sep + 1..];
    let rest = &rest[..rest.iter().position(|&t| t == EOS).unwrap_or(rest.len())];
    Some((to_bytes(&tokens[..sep])?, to_bytes(rest)?))
}

fn log_softmax_at(logits: &[f64], probs: &mut [f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (p, &l) in probs.iter_mut().zip(logits) {
        *p = (l - max).exp();
        z += *p;
    }
    for p in probs.iter_mut() {
        *p /= z;
    }
    logits[target] - max - z.ln()
}

struct ExampleResult {
    loss_sum: f64,
    count: usize,
    grad: Option<Vec<f64>>,
}

fn example_forward_backward(model: &ToyLm, prompt: &SoftPrompt, ex: &EncodedExample, with_grad: bool) -> ExampleResult {
    let (d, h, m) = (model.d, model.h, prompt.m);
    let n_target = ex.target.len();
    let n_input = ex.input.len();
    // positions 1..=len; states[0] is s_0 = 0
    let len = m + n_input + n_target.saturating_sub(1);
    let mut states = vec![0.0; (len + 1) * h];
    for t in 1..=len {
        let x: &[f64] = if t <= m {
            prompt.row(t - 1)
        } else if t <= m + n_input {
            model.embedding(ex.input[t - m - 1])
        } else {
            model.embedding(ex.target[t - m - n_input - 1])
        };
        let (prev, next) = states.split_at_mut(t * h);
        model.step(&prev[(t - 1) * h..], x, &mut next[..h]);
    }

    // loss positions: first_loss .. first_loss + n_target - 1
    let first_loss = m + n_input;
    let mut logits = vec![0.0; VOCAB_SIZE];
    let mut probs = vec![0.0; VOCAB_SIZE * n_target];
    let mut loss_sum = 0.0;
    for (j, &target) in ex.target.iter().enumerate() {
        let t = first_loss + j;
        model.logits(&states[t * h..(t + 1) * h], &mut logits);
        loss_sum -= log_softmax_at(
            &logits,
            &mut probs[j * VOCAB_SIZE..(j + 1) * VOCAB_SIZE],
            target as usize,
        );
    }
    if !with_grad {
        return ExampleResult {
            loss_sum,
            count: n_target,
            grad: None,
        };
    }

    let mut grad = vec![0.0; m * d];
    let mut ds_next = vec![0.0; h];
    let mut ds = vec![0.0; h];
    let mut da = vec![0.0; h];
    for t in (1..=len).rev() {
        ds.copy_from_slice(&ds_next);
        if t >= first_loss {
            let j = t - first_loss;
            let p = &probs[j * VOCAB_SIZE..(j + 1) * VOCAB_SIZE];
            let target = ex.target[j] as usize;
            for (k, &pk) in p.iter().enumerate() {
                let g = if k == target { pk - 1.0 } else { pk };
                if g != 0.0 {
                    let row = &model.w_o[k * h..(k + 1) * h];
                    for (dsi, w) in ds.iter_mut().zip(row) {
                        *dsi += g * w;
                    }
                }
            }
        }
        let s = &states[t * h..(t + 1) * h];
        for i in 0..h {
            da[i] = ds[i] * (1.0 - s[i] * s[i]);
        }
        if t <= m {
            let g_row = &mut grad[(t - 1) * d..t * d];
            for (i, &dai) in da.iter().enumerate() {
                let wx = &model.w_x[i * d..(i + 1) * d];
                for (g, w) in g_row.iter_mut().zip(wx) {
                    *g += dai * w;
                }
            }
        }
        ds_next.iter_mut().for_each(|v| *v = 0.0);
        for (i, &dai) in da.iter().enumerate() {
            let ws = &model.w_s[i * h..(i + 1) * h];
            for (dn, w) in ds_next.iter_mut().zip(ws) {
                *dn += dai * w;
            }
        }
    }
    ExampleResult {
        loss_sum,
        count: n_target,
        grad: Some(grad),
    }
}

fn reduce(results: Vec<ExampleResult>, grad_len: usize) -> (f64, Option<Vec<f64>>) {
    let count: usize = results.iter().map(|r| r.count).sum();
    let loss_sum: f64 = results.iter().map(|r| r.loss_sum).sum();
    let mut grad: Option<Vec<f64>> = None;
    for r in results {
        if let Some(g) = r.grad {
            let acc = grad.get_or_insert_with(|| vec![0.0; grad_len]);
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    let n = count.max(1) as f64;
    if let Some(g) = grad.as_mut() {
        g.iter_mut().for_each(|v| *v /= n);
    }
    (loss_sum / n, grad)
}

/// Mean cross-entropy over every target position in the batch.
pub fn loss(model: &ToyLm, prompt: &SoftPrompt, batch: &[EncodedExample]) -> f64 {
    loss_with(Execution::default(), model, prompt, batch)
}

pub fn loss_with(exec: Execution, model: &ToyLm, prompt: &SoftPrompt, batch: &[EncodedExample]) -> f64 {
    assert!(!batch.is_empty(), "loss needs a non-empty batch");
    prompt.check_model(model);
    let results = par::map(exec, batch, |ex| example_forward_backward(model, prompt, ex, false));
    reduce(results, 0).0
}

/// Loss and its exact gradient with respect to the prompt (backpropagation
/// through time). Per-example work runs under `exec`; the reduction is
/// sequential, so the result does not depend on the execution mode.
pub fn loss_and_grad_with(
    exec: Execution,
    model: &ToyLm,
    prompt: &SoftPrompt,
    batch: &[EncodedExample],
) -> (f64, Vec<f64>) {
    assert!(!batch.is_empty(), "gradient needs a non-empty batch");
    prompt.check_model(model);
    let results = par::map(exec, batch, |ex| example_forward_backward(model, prompt, ex, true));
    let (l, g) = reduce(results, prompt.m * prompt.d);
    (l, g.expect("gradients requested"))
}

pub fn grad(model: &ToyLm, prompt: &SoftPrompt, batch: &[EncodedExample]) -> Vec<f64> {
    loss_and_grad_with(Execution::default(), model, prompt, batch).1
}

/// Argmax decoding after reading the prompt and `context_tokens`; stops at EOS
/// (not emitted) or after `max_len` tokens. Ties go to the lowest token id.
pub fn greedy_decode(model: &ToyLm, prompt: &SoftPrompt, context_tokens: &[Token], max_len: usize) -> Vec<Token> {
    prompt.check_model(model);
    let mut out = Vec::new();
    if max_len == 0 {
        return out;
    }
    let h = model.h;
    let mut state = vec![0.0; h];
    let mut next = vec![0.0; h];
    for i in 0..prompt.m {
        model.step(&state, prompt.row(i), &mut next);
        std::mem::swap(&mut state, &mut next);
    }
    for &tok in context_tokens {
        model.step(&state, model.embedding(tok), &mut next);
        std::mem::swap(&mut state, &mut next);
    }
    let mut logits = vec![0.0; VOCAB_SIZE];
    while out.len() < max_len {
        model.logits(&state, &mut logits);
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        let tok = best as Token;
        if tok == EOS {
            break;
        }
        out.push(tok);
        model.step(&state, model.embedding(tok), &mut next);
        std::mem::swap(&mut state, &mut next);
    }
    out
}

/// Factored second-moment estimate: one accumulator per prompt row and one
/// per embedding column.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredMoments {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
}

impl FactoredMoments {
    pub fn new(m: usize, d: usize) -> Self {
        FactoredMoments {
            row: vec![0.0; m],
            col: vec![0.0; d],
        }
    }

    /// Folds in `grad` at step `t` (1-based) with decay `1 - t^-0.8` and
    /// returns the reconstructed `m × d` estimate `row[i] * col[j] / mean(row)`.
    pub fn update(&mut self, grad: &[f64], t: usize) -> Vec<f64> {
        let (m, d) = (self.row.len(), self.col.len());
        assert_eq!(grad.len(), m * d, "gradient shape mismatch");
        let beta = 1.0 - (t.max(1) as f64).powf(DECAY_EXPONENT);
        for i in 0..m {
            let mean_sq = grad[i * d..(i + 1) * d].iter().map(|g| g * g).sum::<f64>() / d as f64;
            self.row[i] = beta * self.row[i] + (1.0 - beta) * mean_sq;
        }
        for j in 0..d {
            let mean_sq = (0..m).map(|i| grad[i * d + j].powi(2)).sum::<f64>() / m as f64;
            self.col[j] = beta * self.col[j] + (1.0 - beta) * mean_sq;
        }
        let row_mean = self.row.iter().sum::<f64>() / m as f64;
        let mut vhat = vec![0.0; m * d];
        if row_mean > 0.0 {
            for i in 0..m {
                for j in 0..d {
                    vhat[i * d + j] = self.row[i] * self.col[j] / row_mean;
                }
            }
        }
        vhat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    Bleu,
    DevLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Soft prompt length `m`.
    pub prompt_length: usize,
    pub early_stop_metric: EarlyStopMetric,
    pub seed: u64,
    /// Upper bound on decoded tokens when scoring BLEU on the dev set.
    pub decode_max_len: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            learning_rate: 0.3,
            warmup_steps: 200,
            batch_size: 16,
            max_steps: 1000,
            eval_every: 50,
            prompt_length: 50,
            early_stop_metric: EarlyStopMetric::Bleu,
            seed: 0,
            decode_max_len: 128,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("warmup_steps", self.warmup_steps),
            ("batch_size", self.batch_size),
            ("max_steps", self.max_steps),
            ("eval_every", self.eval_every),
            ("prompt_length", self.prompt_length),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("tuner {name} must be at least 1")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("tuner learning_rate must be positive"));
        }
        Ok(())
    }

    /// Linear warmup to `learning_rate` over `warmup_steps`, constant after.
    pub fn learning_rate_at(&self, t: usize) -> f64 {
        self.learning_rate * (t as f64 / self.warmup_steps as f64).min(1.0)
    }

    pub fn hash(&self) -> String {
        crate::util::config_hash(self)
    }
}

/// Applies one factored-moment update to `prompt` at step `t` (1-based).
pub fn optimizer_step(
    state: &mut FactoredMoments,
    prompt: &mut SoftPrompt,
    gradient: &[f64],
    t: usize,
    config: &TuneConfig,
) {
    assert_eq!(gradient.len(), prompt.values.len(), "gradient shape mismatch");
    let vhat = state.update(gradient, t);
    let lr = config.learning_rate_at(t);
    for ((p, g), v) in prompt.values.iter_mut().zip(gradient).zip(&vhat) {
        *p -= lr * g / (v + ADAFACTOR_EPS).sqrt();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneTrace {
    pub metric: EarlyStopMetric,
    pub initial_train_loss: f64,
    pub records: Vec<EvalRecord>,
    pub best_step: usize,
    pub best_metric: f64,
    pub best_prompt: SoftPrompt,
    pub final_prompt: SoftPrompt,
}

impl TuneTrace {
    pub fn final_train_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_train_loss, |r| r.train_loss)
    }
}

fn encode_all(dataset: &Dataset) -> Result<Vec<EncodedExample>> {
    dataset.iter().map(encode_example).collect()
}

/// Corpus BLEU (on bytes) of greedily decoded questions against the dev questions.
pub fn dev_bleu(model: &ToyLm, prompt: &SoftPrompt, dev: &[EncodedExample], max_len: usize) -> f64 {
    let decoded = par::map(Execution::default(), dev, |ex| {
        greedy_decode(model, prompt, &ex.input, max_len)
    });
    let hyps: Vec<Vec<Token>> = decoded
        .iter()
        .map(|toks| match toks.iter().position(|&t| t == SEP) {
            Some(sep) => toks[sep + 1..].to_vec(),
            None => Vec::new(),
        })
        .collect();
    let refs: Vec<Vec<Token>> = dev
        .iter()
        .map(|ex| {
            let sep = ex
                .target
                .iter()
                .position(|&t| t == SEP)
                .expect("encoded targets contain SEP");
            ex.target[sep + 1..ex.target.len() - 1].to_vec()
        })
        .collect();
    corpus_bleu(&hyps, &refs).map(|b| b.score).unwrap_or(0.0)
}

/// Evaluates the configured early-stopping metric for `prompt`.
pub fn dev_metric(model: &ToyLm, prompt: &SoftPrompt, dev: &[EncodedExample], config: &TuneConfig) -> f64 {
    match config.early_stop_metric {
        EarlyStopMetric::Bleu => dev_bleu(model, prompt, dev, config.decode_max_len),
        EarlyStopMetric::DevLoss => loss(model, prompt, dev),
    }
}

/// Minibatch training of a fresh soft prompt for one language.
///
/// Batches are drawn from a per-epoch seeded shuffle. Every `eval_every`
/// steps, and at the final step, the full-train loss and the dev metric are
/// recorded; the best prompt (highest BLEU or lowest dev loss, earliest on
/// ties) is kept.
pub fn tune(model: &ToyLm, train: &Dataset, dev: &Dataset, config: &TuneConfig) -> Result<TuneTrace> {
    config.validate()?;
    model.check_shapes()?;
    train.sole_language()?;
    dev.sole_language()?;
    let train_enc = encode_all(train)?;
    let dev_enc = encode_all(dev)?;

    let mut prompt = SoftPrompt::random(config.prompt_length, model.d, config.seed)?;
    let mut moments = FactoredMoments::new(prompt.m, prompt.d);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..train_enc.len()).collect();
    let mut cursor = order.len();

    let initial_train_loss = loss(model, &prompt, &train_enc);
    let mut records = Vec::new();
    let mut best: Option<(usize, f64, SoftPrompt)> = None;
    let mut batch = Vec::with_capacity(config.batch_size);

    for step in 1..=config.max_steps {
        batch.clear();
        while batch.len() < config.batch_size.min(train_enc.len()) {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            batch.push(train_enc[order[cursor]].clone());
            cursor += 1;
        }
        let (_, g) = loss_and_grad_with(Execution::default(), model, &prompt, &batch);
        optimizer_step(&mut moments, &mut prompt, &g, step, config);

        if step % config.eval_every == 0 || step == config.max_steps {
            let train_loss = loss(model, &prompt, &train_enc);
            let metric = dev_metric(model, &prompt, &dev_enc, config);
            records.push(EvalRecord {
                step,
                train_loss,
                dev_metric: metric,
            });
            let better = match (&best, config.early_stop_metric) {
                (None, _) => true,
                (Some((_, b, _)), EarlyStopMetric::Bleu) => metric > *b,
                (Some((_, b, _)), EarlyStopMetric::DevLoss) => metric < *b,
            };
            if better {
                best = Some((step, metric, prompt.clone()));
            }
        }
    }

    let (best_step, best_metric, best_prompt) = best.expect("at least one evaluation runs");
    Ok(TuneTrace {
        metric: config.early_stop_metric,
        initial_train_loss,
        records,
        best_step,
        best_metric,
        best_prompt,
        final_prompt: prompt,
    })
}
