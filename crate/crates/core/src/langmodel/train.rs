//! Adam optimization over shuffled multi-field examples.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_vocab, loss_and_grads, perplexity, Example, ModelError, ModelParams, Real};
use crate::corpus::RecipeRecord;
use crate::fieldcodec::{make_training_example, serialize_canonical, BpeVocab, LossMask, DEFAULT_MAX_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub warmup_steps: usize,
    /// Validation perplexity is measured every `eval_every` steps (and at
    /// the start and end); zero disables intermediate evaluations.
    pub eval_every: usize,
    pub seed: u64,
    pub max_len: usize,
    pub mask: LossMask,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-3,
            batch_size: 8,
            steps: 600,
            warmup_steps: 100,
            eval_every: 100,
            seed: 0,
            max_len: DEFAULT_MAX_LEN,
            mask: LossMask::default(),
            clip: Some(1.0),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam { step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    /// Learning rate after linear warmup.
    pub fn scheduled_lr(cfg: &TrainConfig, step: u64) -> f64 {
        if cfg.warmup_steps == 0 {
            cfg.lr
        } else {
            cfg.lr * ((step as f64) / cfg.warmup_steps as f64).min(1.0)
        }
    }

    /// One bias-corrected update.
    pub fn update<R: Real>(&mut self, params: &mut [R], grads: &[R], cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let lr = Self::scheduled_lr(cfg, self.step);
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        for i in 0..params.len() {
            let g = grads[i].to_f64_lossy() as f32;
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] as f64 / c1;
            let vhat = self.v[i] as f64 / c2;
            let delta = lr * mhat / (Float::sqrt(vhat) + cfg.eps);
            params[i] -= R::from_f64_lossy(delta);
        }
    }
}

/// Scales `grads` so their L2 norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_grad_norm<R: Real>(grads: &mut [R], max_norm: f64) -> f64 {
    let norm = Float::sqrt(grads.iter().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>());
    if norm > max_norm && norm > 0.0 {
        let s = R::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// A recipe in canonical field order, cut to `max_len` tokens.
pub fn canonical_example(record: &RecipeRecord, vocab: &BpeVocab, max_len: usize, mask: &LossMask) -> Example {
    let mut ids = vocab.encode_serialized(&serialize_canonical(record));
    ids.truncate(max_len);
    Example::new(&ids, mask, vocab)
}

/// Perplexity of the canonical serializations of `records`.
pub fn validation_perplexity<R: Real>(
    params: &ModelParams<R>,
    records: &[RecipeRecord],
    vocab: &BpeVocab,
    max_len: usize,
    mask: &LossMask,
) -> Result<Option<f64>, ModelError> {
    let examples: Vec<Example> = records.iter().map(|r| canonical_example(r, vocab, max_len, mask)).collect();
    perplexity(params, &examples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    /// Mean training loss of the batch taken at this step (absent for the
    /// initial evaluation).
    pub train_loss: Option<f64>,
    pub val_ppl: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<R> {
    pub params: ModelParams<R>,
    pub optimizer: Adam,
    pub trace: Vec<TraceRow>,
}

impl<R> TrainOutcome<R> {
    pub fn initial_val_ppl(&self) -> Option<f64> {
        self.trace.first().and_then(|r| r.val_ppl)
    }

    pub fn final_val_ppl(&self) -> Option<f64> {
        self.trace.iter().rev().find_map(|r| r.val_ppl)
    }
}

/// Trains `params` on freshly shuffled examples drawn from `train_set`,
/// tracking validation perplexity on `val_set`. `progress` sees every trace
/// row as it is produced.
pub fn train<R: Real>(
    mut params: ModelParams<R>,
    vocab: &BpeVocab,
    train_set: &[RecipeRecord],
    val_set: &[RecipeRecord],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&TraceRow),
) -> Result<TrainOutcome<R>, ModelError> {
    check_vocab(&params, vocab)?;
    if train_set.is_empty() || cfg.batch_size == 0 {
        return Err(ModelError::NoExamples);
    }
    let max_len = cfg.max_len.min(params.config().context_len);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(params.len());
    let mut trace = Vec::new();
    let eval = |p: &ModelParams<R>| -> Result<Option<f64>, ModelError> {
        if val_set.is_empty() {
            Ok(None)
        } else {
            validation_perplexity(p, val_set, vocab, max_len, &cfg.mask)
        }
    };

    let row = TraceRow { step: 0, train_loss: None, val_ppl: eval(&params)? };
    progress(&row);
    trace.push(row);
    for step in 1..=cfg.steps {
        let batch: Vec<Example> = (0..cfg.batch_size)
            .map(|_| {
                let rec = &train_set[rng.gen_range(0..train_set.len())];
                let enc = make_training_example(rec, rng.gen(), vocab, max_len);
                Example::from_encoded(&enc, &cfg.mask, vocab)
            })
            .collect();
        let mut out = loss_and_grads(&params, &batch)?;
        if let Some(c) = cfg.clip {
            clip_grad_norm(&mut out.grads, c);
        }
        opt.update(params.data_mut(), &out.grads, cfg);
        let due = step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        let row = TraceRow { step, train_loss: Some(out.loss), val_ppl: if due { eval(&params)? } else { None } };
        progress(&row);
        trace.push(row);
    }
    Ok(TrainOutcome { params, optimizer: opt, trace })
}
