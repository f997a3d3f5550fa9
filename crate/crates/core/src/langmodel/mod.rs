//! A small decoder-only transformer language model over BPE ids.
//!
//! [`ModelParams`] holds the weights, [`loss_and_grads`] computes the
//! masked next-token cross entropy and its gradient, [`train`] runs Adam
//! over shuffled multi-field examples and [`sample_topk`] decodes with a
//! key/value cache.

mod model;
mod sample;
pub mod tensor;
mod train;

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::fieldcodec::{BpeVocab, EncodedRecipe, LossMask};

pub use model::{BlockLayout, ForwardCache, Layout, ModelConfig, ModelParams};
pub use sample::{
    generate_field, sample_topk, top_k_support, DecodeObserver, GeneratedField, KvCache, SamplingConfig,
    SamplingOutput, StopReason, MAX_NEW_TOKENS,
};
pub use tensor::Real;
pub use train::{
    canonical_example, clip_grad_norm, train, validation_perplexity, Adam, TraceRow, TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration {0:?}")]
    InvalidConfig(ModelConfig),
    #[error("sequence of {len} tokens exceeds the context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {0} is outside the model vocabulary")]
    TokenOutOfRange(u32),
    #[error("parameter buffer has {found} values, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("vocabulary has {vocab} tokens but the model expects {model}")]
    VocabMismatch { vocab: usize, model: usize },
    #[error("top-k sampling needs k >= 1")]
    InvalidK,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("no training examples")]
    NoExamples,
    #[error(transparent)]
    Codec(#[from] crate::fieldcodec::CodecError),
}

/// A token sequence with per-target loss weights: `weights[t]` says whether
/// predicting `ids[t + 1]` counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub ids: Vec<u32>,
    pub weights: Vec<bool>,
}

impl Example {
    /// Applies `mask` and drops the tail after the last counted target, so
    /// padding that does not contribute is never run through the model.
    pub fn new(ids: &[u32], mask: &LossMask, vocab: &BpeVocab) -> Self {
        let weights = mask.target_weights(ids, vocab);
        let keep = weights.iter().rposition(|&w| w).map_or(0, |t| t + 2);
        Example { ids: ids[..keep].to_vec(), weights: weights[..keep.saturating_sub(1)].to_vec() }
    }

    pub fn from_encoded(enc: &EncodedRecipe, mask: &LossMask, vocab: &BpeVocab) -> Self {
        Self::new(&enc.ids, mask, vocab)
    }

    pub fn n_targets(&self) -> usize {
        self.weights.iter().filter(|&&w| w).count()
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput<R> {
    /// Mean negative log-likelihood per counted target (nats); zero when
    /// nothing is counted.
    pub loss: f64,
    /// Summed negative log-likelihood.
    pub total_nll: f64,
    pub n_targets: usize,
    pub grads: Vec<R>,
}

/// Log-softmax cross entropy of one row; writes `softmax - onehot` scaled
/// by `scale` into `grad` when given.
fn row_xent<R: Real>(logits: &[R], target: usize, grad: Option<(&mut [R], R)>) -> f64 {
    let max = logits.iter().copied().fold(R::neg_infinity(), R::max);
    let sum: R = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    if let Some((g, scale)) = grad {
        for (gi, &z) in g.iter_mut().zip(logits) {
            *gi = (z - lse).exp() * scale;
        }
        g[target] -= scale;
    }
    (lse - logits[target]).to_f64_lossy()
}

/// Token-level mean cross entropy over every counted target in the batch,
/// and its gradient with respect to all parameters.
pub fn loss_and_grads<R: Real>(params: &ModelParams<R>, batch: &[Example]) -> Result<LossOutput<R>, ModelError> {
    let n_targets: usize = batch.iter().map(Example::n_targets).sum();
    let mut grads = vec![R::zero(); params.len()];
    if n_targets == 0 {
        log::warn!("batch has no counted targets; loss is zero");
        return Ok(LossOutput { loss: 0.0, total_nll: 0.0, n_targets, grads });
    }
    let v = params.config().vocab_size;
    let scale = R::one() / R::from_usize(n_targets).expect("count fits");
    let mut total = 0.0;
    for ex in batch.iter().filter(|e| e.n_targets() > 0) {
        let cache = params.forward_cached(&ex.ids)?;
        let mut dlogits = vec![R::zero(); cache.logits.len()];
        for (t, _) in ex.weights.iter().enumerate().filter(|(_, &w)| w) {
            let row = &cache.logits[t * v..(t + 1) * v];
            total += row_xent(row, ex.ids[t + 1] as usize, Some((&mut dlogits[t * v..(t + 1) * v], scale)));
        }
        params.backward(&cache, &dlogits, &mut grads);
    }
    Ok(LossOutput { loss: total / n_targets as f64, total_nll: total, n_targets, grads })
}

/// Summed negative log-likelihood and target count, without gradients.
pub fn nll<R: Real>(params: &ModelParams<R>, batch: &[Example]) -> Result<(f64, usize), ModelError> {
    let v = params.config().vocab_size;
    let mut total = 0.0;
    let mut n = 0;
    for ex in batch.iter().filter(|e| e.n_targets() > 0) {
        let logits = params.forward(&ex.ids)?;
        for (t, _) in ex.weights.iter().enumerate().filter(|(_, &w)| w) {
            total += row_xent(&logits[t * v..(t + 1) * v], ex.ids[t + 1] as usize, None);
            n += 1;
        }
    }
    Ok((total, n))
}

/// `exp(mean NLL)` over all counted targets; `None` when nothing counts.
pub fn perplexity<R: Real>(params: &ModelParams<R>, batch: &[Example]) -> Result<Option<f64>, ModelError> {
    let (total, n) = nll(params, batch)?;
    Ok((n > 0).then(|| Float::exp(total / n as f64)))
}

/// Fails when the vocabulary size differs from the model's.
pub fn check_vocab<R: Real>(params: &ModelParams<R>, vocab: &BpeVocab) -> Result<(), ModelError> {
    let model = params.config().vocab_size;
    if vocab.len() != model {
        return Err(ModelError::VocabMismatch { vocab: vocab.len(), model });
    }
    Ok(())
}
