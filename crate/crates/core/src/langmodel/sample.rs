//! Incremental decoding with a key/value cache and top-k sampling.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{add_bias, gelu, layer_norm};
use super::tensor::{matmul, View, ViewMut};
use super::{check_vocab, ModelError, ModelParams, Real};
use crate::fieldcodec::{build_prompt, BpeVocab, FieldKind};

/// Upper bound on generated tokens per request.
pub const MAX_NEW_TOKENS: usize = 384;

/// Keys and values of every position fed so far, per layer.
#[derive(Debug, Clone)]
pub struct KvCache<R> {
    keys: Vec<Vec<R>>,
    values: Vec<Vec<R>>,
    len: usize,
}

impl<R: Real> KvCache<R> {
    pub fn new(params: &ModelParams<R>) -> Self {
        let c = params.config();
        let cap = c.context_len * c.embed_dim;
        KvCache {
            keys: (0..c.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..c.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<R: Real> ModelParams<R> {
    /// Feeds one token at the next position and returns its next-token
    /// logits.
    pub fn step(&self, cache: &mut KvCache<R>, id: u32) -> Result<Vec<R>, ModelError> {
        let c = *self.config();
        if cache.len >= c.context_len {
            return Err(ModelError::SequenceTooLong { len: cache.len + 1, max: c.context_len });
        }
        if id as usize >= c.vocab_size {
            return Err(ModelError::TokenOutOfRange(id));
        }
        let lay = self.layout();
        let p = self.data();
        let (d, h, nh, hd, pos) = (c.embed_dim, c.hidden_dim(), c.n_heads, c.head_dim(), cache.len);
        let n = pos + 1;
        let scale = R::one() / R::from_usize(hd).expect("head dim").sqrt();
        let mut x: Vec<R> = (0..d).map(|i| p[lay.wte.start + id as usize * d + i] + p[lay.wpe.start + pos * d + i]).collect();
        let mut ln = vec![R::zero(); d];
        let (mut mean, mut rstd) = ([R::zero()], [R::zero()]);
        let mut qkv = vec![R::zero(); 3 * d];
        let mut att = vec![R::zero(); d];
        let mut fc = vec![R::zero(); h];
        let mut scores = vec![R::zero(); n];
        for (l, bl) in lay.blocks.iter().enumerate() {
            layer_norm(&x, d, &p[bl.ln1_g.clone()], &p[bl.ln1_b.clone()], &mut ln, &mut mean, &mut rstd);
            matmul(View::new(&ln, 1, d), View::new(&p[bl.w_qkv.clone()], d, 3 * d), ViewMut::new(&mut qkv, 1, 3 * d), false);
            add_bias(&mut qkv, &p[bl.b_qkv.clone()]);
            cache.keys[l].extend_from_slice(&qkv[d..2 * d]);
            cache.values[l].extend_from_slice(&qkv[2 * d..]);
            let (keys, values) = (&cache.keys[l], &cache.values[l]);
            for head in 0..nh {
                let q = &qkv[head * hd..(head + 1) * hd];
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &keys[j * d + head * hd..j * d + (head + 1) * hd];
                    *s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<R>() * scale;
                }
                let max = scores.iter().copied().fold(R::neg_infinity(), R::max);
                let mut sum = R::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let out = &mut att[head * hd..(head + 1) * hd];
                out.fill(R::zero());
                for (j, &s) in scores.iter().enumerate() {
                    let w = s / sum;
                    let v = &values[j * d + head * hd..j * d + (head + 1) * hd];
                    for (o, &vv) in out.iter_mut().zip(v) {
                        *o += w * vv;
                    }
                }
            }
            matmul(View::new(&att, 1, d), View::new(&p[bl.w_o.clone()], d, d), ViewMut::new(&mut x, 1, d), true);
            add_bias(&mut x, &p[bl.b_o.clone()]);
            layer_norm(&x, d, &p[bl.ln2_g.clone()], &p[bl.ln2_b.clone()], &mut ln, &mut mean, &mut rstd);
            matmul(View::new(&ln, 1, d), View::new(&p[bl.w_fc.clone()], d, h), ViewMut::new(&mut fc, 1, h), false);
            add_bias(&mut fc, &p[bl.b_fc.clone()]);
            for v in fc.iter_mut() {
                *v = gelu(*v);
            }
            matmul(View::new(&fc, 1, h), View::new(&p[bl.w_proj.clone()], h, d), ViewMut::new(&mut x, 1, d), true);
            add_bias(&mut x, &p[bl.b_proj.clone()]);
        }
        layer_norm(&x, d, &p[lay.lnf_g.clone()], &p[lay.lnf_b.clone()], &mut ln, &mut mean, &mut rstd);
        let mut logits = vec![R::zero(); c.vocab_size];
        matmul(
            View::new(&ln, 1, d),
            View::new(&p[lay.wte.clone()], c.vocab_size, d).t(),
            ViewMut::new(&mut logits, 1, c.vocab_size),
            false,
        );
        cache.len += 1;
        Ok(logits)
    }
}

/// The `k` highest-scoring ids, best first; equal scores are ordered by
/// ascending id. `k` larger than the vocabulary selects everything.
pub fn top_k_support<R: Real>(logits: &[R], k: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..logits.len() as u32).collect();
    let key = |i: &u32| logits[*i as usize];
    ids.sort_by(|a, b| key(b).partial_cmp(&key(a)).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(b)));
    ids.truncate(k.max(1));
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub k: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { k: 3, max_new_tokens: MAX_NEW_TOKENS, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// A stop token was produced.
    StopToken,
    /// The token budget ran out.
    MaxTokens,
    /// The context window is full.
    ContextFull,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingOutput {
    /// Generated ids, including the stop token when one was produced.
    pub ids: Vec<u32>,
    pub stop: StopReason,
}

/// Instrumentation hook called for every decoding step.
pub trait DecodeObserver {
    fn on_step(&mut self, step: usize, support: &[u32], chosen: u32);
}

impl DecodeObserver for () {
    fn on_step(&mut self, _: usize, _: &[u32], _: u32) {}
}

impl<F: FnMut(usize, &[u32], u32)> DecodeObserver for F {
    fn on_step(&mut self, step: usize, support: &[u32], chosen: u32) {
        self(step, support, chosen)
    }
}

/// Draws from the softmax over the top-k logits, renormalized; `k = 1` is
/// greedy decoding and consumes no randomness.
fn draw<R: Real>(logits: &[R], support: &[u32], rng: &mut ChaCha8Rng) -> u32 {
    if support.len() == 1 {
        return support[0];
    }
    let max = logits[support[0] as usize].to_f64_lossy();
    let w: Vec<f64> = support.iter().map(|&i| num_traits::Float::exp(logits[i as usize].to_f64_lossy() - max)).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return support[i];
        }
        u -= wi;
    }
    *support.last().expect("non-empty support")
}

/// Continues `prompt` with top-k sampling until a token in `stop_ids`
/// appears, `max_new_tokens` tokens are produced or the context is full.
pub fn sample_topk<R: Real>(
    params: &ModelParams<R>,
    prompt: &[u32],
    cfg: &SamplingConfig,
    stop_ids: &[u32],
    observer: &mut dyn DecodeObserver,
) -> Result<SamplingOutput, ModelError> {
    if cfg.k == 0 {
        return Err(ModelError::InvalidK);
    }
    if prompt.is_empty() {
        return Err(ModelError::EmptyPrompt);
    }
    let ctx = params.config().context_len;
    if prompt.len() > ctx {
        return Err(ModelError::SequenceTooLong { len: prompt.len(), max: ctx });
    }
    let budget = cfg.max_new_tokens.min(ctx - prompt.len());
    let mut cache = KvCache::new(params);
    let mut logits = Vec::new();
    for &id in prompt {
        logits = params.step(&mut cache, id)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ids = Vec::new();
    for step in 0..budget {
        let support = top_k_support(&logits, cfg.k);
        let next = draw(&logits, &support, &mut rng);
        observer.on_step(step, &support, next);
        ids.push(next);
        if stop_ids.contains(&next) {
            return Ok(SamplingOutput { ids, stop: StopReason::StopToken });
        }
        if step + 1 < budget {
            logits = params.step(&mut cache, next)?;
        }
    }
    let stop = if budget < cfg.max_new_tokens { StopReason::ContextFull } else { StopReason::MaxTokens };
    Ok(SamplingOutput { ids, stop })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedField {
    pub field: FieldKind,
    /// Decoded text with delimiter tokens removed.
    pub text: String,
    /// True when decoding stopped before the field's end delimiter.
    pub truncated: bool,
    pub stop: StopReason,
    pub ids: Vec<u32>,
    pub prompt_len: usize,
}

/// Generates the `target` field conditioned on the `context` fields.
pub fn generate_field<R: Real>(
    params: &ModelParams<R>,
    vocab: &BpeVocab,
    context: &BTreeMap<FieldKind, String>,
    target: FieldKind,
    cfg: &SamplingConfig,
    observer: &mut dyn DecodeObserver,
) -> Result<GeneratedField, ModelError> {
    check_vocab(params, vocab)?;
    let prompt = build_prompt(context, target, vocab)?;
    let end = vocab.end_id(target);
    let out = sample_topk(params, &prompt, cfg, &[end], observer)?;
    let content: Vec<u32> = out.ids.iter().copied().filter(|&i| !vocab.is_special(i)).collect();
    let text = vocab.decode(&content)?.trim().into();
    Ok(GeneratedField {
        field: target,
        text,
        truncated: out.stop != StopReason::StopToken,
        stop: out.stop,
        ids: out.ids,
        prompt_len: prompt.len(),
    })
}
