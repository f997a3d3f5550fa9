//! Decoder-only transformer: parameters, forward pass and backpropagation.
//!
//! Pre-norm blocks (`x + attn(ln(x))`, `x + mlp(ln(x))`), learned position
//! embeddings, tanh-approximated GELU and an output projection tied to the
//! token embedding. All parameters live in one flat buffer; [`Layout`]
//! names the ranges.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul, matmul_scaled, Real, View, ViewMut};
use super::ModelError;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    pub context_len: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, 4 heads, width 128, 512-token context.
    pub fn desk_default(vocab_size: usize) -> Self {
        ModelConfig { n_layers: 4, n_heads: 4, embed_dim: 128, context_len: 512, vocab_size }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = self.n_layers > 0 && self.n_heads > 0 && self.embed_dim > 0 && self.context_len > 0 && self.vocab_size > 0;
        if !positive || !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(ModelError::InvalidConfig(*self));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn hidden_dim(&self) -> usize {
        4 * self.embed_dim
    }
}

/// Parameter ranges of one transformer block.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_fc: Range<usize>,
    pub b_fc: Range<usize>,
    pub w_proj: Range<usize>,
    pub b_proj: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub wte: Range<usize>,
    pub wpe: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let d = c.embed_dim;
        let h = c.hidden_dim();
        let wte = take(c.vocab_size * d);
        let wpe = take(c.context_len * d);
        let blocks = (0..c.n_layers)
            .map(|_| BlockLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qkv: take(3 * d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_fc: take(d * h),
                b_fc: take(h),
                w_proj: take(h * d),
                b_proj: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        Layout { wte, wpe, blocks, lnf_g, lnf_b, total: at }
    }

    /// Ranges holding layer-norm gains (initialized to one).
    fn gains(&self) -> impl Iterator<Item = &Range<usize>> {
        self.blocks.iter().flat_map(|b| [&b.ln1_g, &b.ln2_g]).chain(core::iter::once(&self.lnf_g))
    }
}

/// Model weights in a flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<R> {
    config: ModelConfig,
    data: Vec<R>,
}

fn normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    Float::sqrt(-2.0 * Float::ln(u1)) * Float::cos(core::f64::consts::TAU * u2)
}

impl<R: Real> ModelParams<R> {
    /// All-zero weights (including layer-norm gains).
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let n = Layout::new(&config).total;
        Ok(ModelParams { config, data: vec![R::zero(); n] })
    }

    /// GPT-2 style initialization: N(0, 0.02) weights, residual output
    /// projections scaled by `1/sqrt(2 * layers)`, unit gains, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        Self::init_with_std(config, seed, 0.02)
    }

    pub fn init_with_std(config: ModelConfig, seed: u64, std: f64) -> Result<Self, ModelError> {
        let mut p = Self::zeros(config)?;
        let layout = p.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let resid = std / Float::sqrt(2.0 * config.n_layers as f64);
        let mut fill = |data: &mut [R], r: &Range<usize>, s: f64| {
            for x in &mut data[r.clone()] {
                *x = R::from_f64_lossy(normal(&mut rng) * s);
            }
        };
        fill(&mut p.data, &layout.wte, std);
        fill(&mut p.data, &layout.wpe, std / 2.0);
        for b in &layout.blocks {
            fill(&mut p.data, &b.w_qkv, std);
            fill(&mut p.data, &b.w_o, resid);
            fill(&mut p.data, &b.w_fc, std);
            fill(&mut p.data, &b.w_proj, resid);
        }
        for g in layout.gains() {
            p.data[g.clone()].fill(R::one());
        }
        Ok(p)
    }

    pub fn from_data(config: ModelConfig, data: Vec<R>) -> Result<Self, ModelError> {
        config.validate()?;
        let n = Layout::new(&config).total;
        if data.len() != n {
            return Err(ModelError::ShapeMismatch { expected: n, found: data.len() });
        }
        Ok(ModelParams { config, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts to another precision.
    pub fn cast<S: Real>(&self) -> ModelParams<S> {
        ModelParams { config: self.config, data: self.data.iter().map(|x| S::from_f64_lossy(x.to_f64_lossy())).collect() }
    }
}

/// Layer norm over rows of `x` (`rows x d`). Writes normalized output and
/// the per-row mean and reciprocal standard deviation.
pub(crate) fn layer_norm<R: Real>(x: &[R], d: usize, g: &[R], b: &[R], out: &mut [R], mean: &mut [R], rstd: &mut [R]) {
    let eps = R::from_f64_lossy(LN_EPS);
    let n = R::from_usize(d).expect("dimension fits");
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mu = row.iter().copied().sum::<R>() / n;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<R>() / n;
        let rs = R::one() / (var + eps).sqrt();
        mean[r] = mu;
        rstd[r] = rs;
        let o = &mut out[r * d..(r + 1) * d];
        for i in 0..d {
            o[i] = (row[i] - mu) * rs * g[i] + b[i];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<R: Real>(
    dy: &[R],
    x: &[R],
    d: usize,
    g: &[R],
    mean: &[R],
    rstd: &[R],
    dx: &mut [R],
    dg: &mut [R],
    db: &mut [R],
) {
    let n = R::from_usize(d).expect("dimension fits");
    for (r, (dyr, xr)) in dy.chunks_exact(d).zip(x.chunks_exact(d)).enumerate() {
        let (mu, rs) = (mean[r], rstd[r]);
        let mut sum_dxhat = R::zero();
        let mut sum_dxhat_xhat = R::zero();
        for i in 0..d {
            let xhat = (xr[i] - mu) * rs;
            let dxhat = dyr[i] * g[i];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dg[i] += dyr[i] * xhat;
            db[i] += dyr[i];
        }
        let m1 = sum_dxhat / n;
        let m2 = sum_dxhat_xhat / n;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            let xhat = (xr[i] - mu) * rs;
            dxr[i] += rs * (dyr[i] * g[i] - m1 - xhat * m2);
        }
    }
}

fn gelu_consts<R: Real>() -> (R, R) {
    (R::from_f64_lossy(0.797_884_560_802_865_4), R::from_f64_lossy(0.044_715))
}

pub(crate) fn gelu<R: Real>(x: R) -> R {
    let (c, a) = gelu_consts::<R>();
    let half = R::from_f64_lossy(0.5);
    half * x * (R::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<R: Real>(x: R) -> R {
    let (c, a) = gelu_consts::<R>();
    let half = R::from_f64_lossy(0.5);
    let three = R::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (R::one() + t) + half * x * (R::one() - t * t) * c * (R::one() + three * a * x * x)
}

pub(crate) fn add_bias<R: Real>(x: &mut [R], bias: &[R]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

fn bias_grad<R: Real>(dy: &[R], db: &mut [R]) {
    for row in dy.chunks_exact(db.len()) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += *v;
        }
    }
}

/// In-place row softmax over the first `valid` entries of each row of a
/// `rows x cols` matrix; entries past `valid` are set to zero.
fn causal_softmax<R: Real>(s: &mut [R], t: usize) {
    for i in 0..t {
        let row = &mut s[i * t..(i + 1) * t];
        let max = row[..=i].iter().copied().fold(R::neg_infinity(), R::max);
        let mut sum = R::zero();
        for v in &mut row[..=i] {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in &mut row[..=i] {
            *v /= sum;
        }
        for v in &mut row[i + 1..] {
            *v = R::zero();
        }
    }
}

struct BlockCache<R> {
    x_in: Vec<R>,
    ln1: Vec<R>,
    ln1_mean: Vec<R>,
    ln1_rstd: Vec<R>,
    qkv: Vec<R>,
    probs: Vec<R>,
    att: Vec<R>,
    x_mid: Vec<R>,
    ln2: Vec<R>,
    ln2_mean: Vec<R>,
    ln2_rstd: Vec<R>,
    fc_pre: Vec<R>,
    fc_act: Vec<R>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache<R> {
    ids: Vec<u32>,
    blocks: Vec<BlockCache<R>>,
    x_final: Vec<R>,
    lnf: Vec<R>,
    lnf_mean: Vec<R>,
    lnf_rstd: Vec<R>,
    /// `len x vocab` logits.
    pub logits: Vec<R>,
}

impl<R: Real> ModelParams<R> {
    fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.len() > self.config.context_len {
            return Err(ModelError::SequenceTooLong { len: ids.len(), max: self.config.context_len });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange(bad));
        }
        Ok(())
    }

    /// Logits for every position (`ids.len() x vocab_size`, row-major).
    pub fn forward(&self, ids: &[u32]) -> Result<Vec<R>, ModelError> {
        Ok(self.forward_cached(ids)?.logits)
    }

    pub fn forward_cached(&self, ids: &[u32]) -> Result<ForwardCache<R>, ModelError> {
        self.check_ids(ids)?;
        let c = &self.config;
        let lay = self.layout();
        let p = &self.data;
        let (t, d, h, nh, hd) = (ids.len(), c.embed_dim, c.hidden_dim(), c.n_heads, c.head_dim());
        let scale = R::one() / R::from_usize(hd).expect("head dim").sqrt();

        let mut x = vec![R::zero(); t * d];
        for (pos, &id) in ids.iter().enumerate() {
            let te = &p[lay.wte.start + id as usize * d..][..d];
            let pe = &p[lay.wpe.start + pos * d..][..d];
            for i in 0..d {
                x[pos * d + i] = te[i] + pe[i];
            }
        }

        let mut blocks = Vec::with_capacity(c.n_layers);
        for bl in &lay.blocks {
            let mut bc = BlockCache {
                x_in: x.clone(),
                ln1: vec![R::zero(); t * d],
                ln1_mean: vec![R::zero(); t],
                ln1_rstd: vec![R::zero(); t],
                qkv: vec![R::zero(); t * 3 * d],
                probs: vec![R::zero(); nh * t * t],
                att: vec![R::zero(); t * d],
                x_mid: Vec::new(),
                ln2: vec![R::zero(); t * d],
                ln2_mean: vec![R::zero(); t],
                ln2_rstd: vec![R::zero(); t],
                fc_pre: vec![R::zero(); t * h],
                fc_act: Vec::new(),
            };
            layer_norm(&x, d, &p[bl.ln1_g.clone()], &p[bl.ln1_b.clone()], &mut bc.ln1, &mut bc.ln1_mean, &mut bc.ln1_rstd);
            matmul(View::new(&bc.ln1, t, d), View::new(&p[bl.w_qkv.clone()], d, 3 * d), ViewMut::new(&mut bc.qkv, t, 3 * d), false);
            add_bias(&mut bc.qkv, &p[bl.b_qkv.clone()]);
            for head in 0..nh {
                let q = View::strided(&bc.qkv[head * hd..], t, hd, 3 * d);
                let k = View::strided(&bc.qkv[d + head * hd..], t, hd, 3 * d);
                let v = View::strided(&bc.qkv[2 * d + head * hd..], t, hd, 3 * d);
                let s = &mut bc.probs[head * t * t..(head + 1) * t * t];
                matmul_scaled(scale, q, k.t(), ViewMut::new(s, t, t), false);
                causal_softmax(s, t);
                matmul(View::new(s, t, t), v, ViewMut::strided(&mut bc.att[head * hd..], t, hd, d), false);
            }
            matmul(View::new(&bc.att, t, d), View::new(&p[bl.w_o.clone()], d, d), ViewMut::new(&mut x, t, d), true);
            add_bias(&mut x, &p[bl.b_o.clone()]);
            bc.x_mid = x.clone();
            layer_norm(&x, d, &p[bl.ln2_g.clone()], &p[bl.ln2_b.clone()], &mut bc.ln2, &mut bc.ln2_mean, &mut bc.ln2_rstd);
            matmul(View::new(&bc.ln2, t, d), View::new(&p[bl.w_fc.clone()], d, h), ViewMut::new(&mut bc.fc_pre, t, h), false);
            add_bias(&mut bc.fc_pre, &p[bl.b_fc.clone()]);
            bc.fc_act = bc.fc_pre.iter().map(|&v| gelu(v)).collect();
            matmul(View::new(&bc.fc_act, t, h), View::new(&p[bl.w_proj.clone()], h, d), ViewMut::new(&mut x, t, d), true);
            add_bias(&mut x, &p[bl.b_proj.clone()]);
            blocks.push(bc);
        }

        let mut lnf = vec![R::zero(); t * d];
        let mut lnf_mean = vec![R::zero(); t];
        let mut lnf_rstd = vec![R::zero(); t];
        layer_norm(&x, d, &p[lay.lnf_g.clone()], &p[lay.lnf_b.clone()], &mut lnf, &mut lnf_mean, &mut lnf_rstd);
        let mut logits = vec![R::zero(); t * c.vocab_size];
        matmul(
            View::new(&lnf, t, d),
            View::new(&p[lay.wte.clone()], c.vocab_size, d).t(),
            ViewMut::new(&mut logits, t, c.vocab_size),
            false,
        );
        Ok(ForwardCache { ids: ids.to_vec(), blocks, x_final: x, lnf, lnf_mean, lnf_rstd, logits })
    }

    /// Accumulates into `grads` the gradient of `sum_t dlogits[t] . logits[t]`
    /// for the forward pass recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache<R>, dlogits: &[R], grads: &mut [R]) {
        let c = &self.config;
        let lay = self.layout();
        let p = &self.data;
        let (t, d, h, nh, hd, v) = (cache.ids.len(), c.embed_dim, c.hidden_dim(), c.n_heads, c.head_dim(), c.vocab_size);
        let scale = R::one() / R::from_usize(hd).expect("head dim").sqrt();
        assert_eq!(grads.len(), lay.total);

        // tied output projection
        let mut dlnf = vec![R::zero(); t * d];
        matmul(View::new(dlogits, t, v), View::new(&p[lay.wte.clone()], v, d), ViewMut::new(&mut dlnf, t, d), false);
        matmul(View::new(dlogits, t, v).t(), View::new(&cache.lnf, t, d), ViewMut::new(&mut grads[lay.wte.clone()], v, d), true);

        let mut dx = vec![R::zero(); t * d];
        {
            let (dg, db) = split_pair(grads, &lay.lnf_g, &lay.lnf_b);
            layer_norm_backward(&dlnf, &cache.x_final, d, &p[lay.lnf_g.clone()], &cache.lnf_mean, &cache.lnf_rstd, &mut dx, dg, db);
        }

        for (bl, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
            // MLP: x_out = x_mid + gelu(ln2 W_fc + b_fc) W_proj + b_proj
            bias_grad(&dx, &mut grads[bl.b_proj.clone()]);
            matmul(View::new(&bc.fc_act, t, h).t(), View::new(&dx, t, d), ViewMut::new(&mut grads[bl.w_proj.clone()], h, d), true);
            let mut dfc = vec![R::zero(); t * h];
            matmul(View::new(&dx, t, d), View::new(&p[bl.w_proj.clone()], h, d).t(), ViewMut::new(&mut dfc, t, h), false);
            for (g, &x) in dfc.iter_mut().zip(&bc.fc_pre) {
                *g *= gelu_grad(x);
            }
            bias_grad(&dfc, &mut grads[bl.b_fc.clone()]);
            matmul(View::new(&bc.ln2, t, d).t(), View::new(&dfc, t, h), ViewMut::new(&mut grads[bl.w_fc.clone()], d, h), true);
            let mut dln2 = vec![R::zero(); t * d];
            matmul(View::new(&dfc, t, h), View::new(&p[bl.w_fc.clone()], d, h).t(), ViewMut::new(&mut dln2, t, d), false);
            {
                let (dg, db) = split_pair(grads, &bl.ln2_g, &bl.ln2_b);
                layer_norm_backward(&dln2, &bc.x_mid, d, &p[bl.ln2_g.clone()], &bc.ln2_mean, &bc.ln2_rstd, &mut dx, dg, db);
            }

            // attention: x_mid = x_in + att W_o + b_o
            bias_grad(&dx, &mut grads[bl.b_o.clone()]);
            matmul(View::new(&bc.att, t, d).t(), View::new(&dx, t, d), ViewMut::new(&mut grads[bl.w_o.clone()], d, d), true);
            let mut datt = vec![R::zero(); t * d];
            matmul(View::new(&dx, t, d), View::new(&p[bl.w_o.clone()], d, d).t(), ViewMut::new(&mut datt, t, d), false);
            let mut dqkv = vec![R::zero(); t * 3 * d];
            let mut dp = vec![R::zero(); t * t];
            for head in 0..nh {
                let probs = &bc.probs[head * t * t..(head + 1) * t * t];
                let q = View::strided(&bc.qkv[head * hd..], t, hd, 3 * d);
                let k = View::strided(&bc.qkv[d + head * hd..], t, hd, 3 * d);
                let vv = View::strided(&bc.qkv[2 * d + head * hd..], t, hd, 3 * d);
                let dout = View::strided(&datt[head * hd..], t, hd, d);
                matmul(dout, vv.t(), ViewMut::new(&mut dp, t, t), false);
                matmul(View::new(probs, t, t).t(), dout, ViewMut::strided(&mut dqkv[2 * d + head * hd..], t, hd, 3 * d), false);
                // softmax backward; masked entries have zero probability
                for i in 0..t {
                    let pr = &probs[i * t..(i + 1) * t];
                    let row = &mut dp[i * t..(i + 1) * t];
                    let dot: R = (0..=i).map(|j| pr[j] * row[j]).sum();
                    for j in 0..t {
                        row[j] = if j <= i { pr[j] * (row[j] - dot) } else { R::zero() };
                    }
                }
                matmul_scaled(scale, View::new(&dp, t, t), k, ViewMut::strided(&mut dqkv[head * hd..], t, hd, 3 * d), false);
                matmul_scaled(scale, View::new(&dp, t, t).t(), q, ViewMut::strided(&mut dqkv[d + head * hd..], t, hd, 3 * d), false);
            }
            bias_grad(&dqkv, &mut grads[bl.b_qkv.clone()]);
            matmul(View::new(&bc.ln1, t, d).t(), View::new(&dqkv, t, 3 * d), ViewMut::new(&mut grads[bl.w_qkv.clone()], d, 3 * d), true);
            let mut dln1 = vec![R::zero(); t * d];
            matmul(View::new(&dqkv, t, 3 * d), View::new(&p[bl.w_qkv.clone()], d, 3 * d).t(), ViewMut::new(&mut dln1, t, d), false);
            {
                let (dg, db) = split_pair(grads, &bl.ln1_g, &bl.ln1_b);
                layer_norm_backward(&dln1, &bc.x_in, d, &p[bl.ln1_g.clone()], &bc.ln1_mean, &bc.ln1_rstd, &mut dx, dg, db);
            }
        }

        for (pos, &id) in cache.ids.iter().enumerate() {
            let row = &dx[pos * d..(pos + 1) * d];
            let te = lay.wte.start + id as usize * d;
            let pe = lay.wpe.start + pos * d;
            for i in 0..d {
                grads[te + i] += row[i];
                grads[pe + i] += row[i];
            }
        }
    }
}

/// Two disjoint mutable ranges of one buffer (`a` must precede `b`).
fn split_pair<'a, R>(buf: &'a mut [R], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [R], &'a mut [R]) {
    assert!(a.end <= b.start);
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}
