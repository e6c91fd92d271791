//! Cross-modal similarity, self-attention over modality rows, reliability
//! weighting and the fused beam classifier.
//!
//! Batched tensors stack the modality rows of each sample contiguously:
//! row `b·n + s` holds modality `s` of sample `b`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math without std
use num_traits::Float;
use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{glorot, Bound, Linear, Mlp, ParamId, ParamStore};
use crate::sensors::CUE_ARITY;

/// Guard on the cue-score spread when standardizing across modalities.
pub const CUE_STD_EPS: f64 = 1e-6;

/// How the attention/reliability mixing coefficient is obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaMode {
    /// Trained through a sigmoid, starting from the given value in (0, 1).
    Learnable(f64),
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub heads: usize,
    /// Adds the input back onto the attention output.
    pub residual: bool,
    pub score_hidden: usize,
    pub cue_hidden: usize,
    /// One score and one cue network for all modalities, or one per modality.
    pub shared_reliability: bool,
    pub alpha: AlphaMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            heads: 4,
            residual: true,
            score_hidden: 16,
            cue_hidden: 16,
            shared_reliability: true,
            alpha: AlphaMode::Learnable(0.5),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, embed_dim: usize) -> Result<()> {
        if self.heads == 0 || embed_dim % self.heads != 0 {
            return Err(Error::Config("attention heads must divide the embedding dimension".into()));
        }
        if self.score_hidden == 0 || self.cue_hidden == 0 {
            return Err(Error::Config("reliability hidden sizes must be positive".into()));
        }
        match self.alpha {
            AlphaMode::Learnable(a) if !(a > 0.0 && a < 1.0) => {
                Err(Error::Config("learnable alpha must start inside (0, 1)".into()))
            }
            AlphaMode::Fixed(a) if !(0.0..=1.0).contains(&a) => {
                Err(Error::Config("fixed alpha must lie in [0, 1]".into()))
            }
            _ => Ok(()),
        }
    }
}

/// `S[i][j] = x̄_iᵀ x̄_j` over unit-norm embeddings.
pub fn similarity_matrix(embeddings: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = embeddings.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let d: f64 = embeddings[i].iter().zip(&embeddings[j]).map(|(a, b)| a * b).sum();
            s[i][j] = d;
            s[j][i] = d;
        }
    }
    s
}

/// Multi-head scaled dot-product self-attention without biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub heads: usize,
    pub dim: usize,
    pub residual: bool,
}

impl Attention {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, dim: usize, heads: usize, residual: bool) -> Self {
        let mut w = |name: &str| store.add(name, glorot(rng, dim, dim));
        Attention {
            query: w("attn.query"),
            key: w("attn.key"),
            value: w("attn.value"),
            output: w("attn.output"),
            heads,
            dim,
            residual,
        }
    }

    /// `f` is `[batch·n, E]`; returns the same shape.
    pub fn forward(&self, tape: &Tape, p: &Bound, f: Var, batch: usize, n: usize) -> Result<Var> {
        let shape = tape.shape(f);
        if shape != [batch * n, self.dim] {
            return Err(Error::dim("self_attention", &shape, &[batch * n, self.dim]));
        }
        let (h, dh) = (self.heads, self.dim / self.heads);
        let split = |x: Var| -> Result<Var> {
            let mut idx = Vec::with_capacity(batch * n * self.dim);
            for b in 0..batch {
                for hi in 0..h {
                    for i in 0..n {
                        let row = (b * n + i) * self.dim + hi * dh;
                        idx.extend(row..row + dh);
                    }
                }
            }
            tape.gather(x, idx, vec![batch * h, n, dh])
        };
        let q = split(tape.matmul(f, p.var(self.query))?)?;
        let k = split(tape.matmul(f, p.var(self.key))?)?;
        let v = split(tape.matmul(f, p.var(self.value))?)?;
        let scores = tape.batch_matmul(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let scores = tape.reshape(scores, vec![batch * h * n, n])?;
        let attn = tape.row_softmax(scores)?;
        let attn = tape.reshape(attn, vec![batch * h, n, n])?;
        let heads_out = tape.batch_matmul(attn, v, false)?;
        let mut idx = Vec::with_capacity(batch * n * self.dim);
        for b in 0..batch {
            for i in 0..n {
                for hi in 0..h {
                    let row = ((b * h + hi) * n + i) * dh;
                    idx.extend(row..row + dh);
                }
            }
        }
        let merged = tape.gather(heads_out, idx, vec![batch * n, self.dim])?;
        let out = tape.matmul(merged, p.var(self.output))?;
        if self.residual {
            tape.add(out, f)
        } else {
            Ok(out)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Alpha {
    /// Unconstrained parameter squashed by a sigmoid.
    Learnable(ParamId),
    Fixed(f64),
}

/// Flips initial cue-network signs so reliability starts out falling with
/// the noise and staleness cues and rising with validity. Magnitudes keep
/// their random draw and every weight stays trainable.
///
/// The z-score over modalities only sees the ordering of the cue scores, and
/// when a single modality stands out its score can move in scale but not
/// change sides, so a wrong ordering drawn at random is never unlearned.
fn orient_cue_net(store: &mut ParamStore, net: &Mlp) {
    // cue columns: noise estimate, staleness, validity
    const UNRELIABILITY: [f64; CUE_ARITY] = [1.0, 1.0, -1.0];
    let hidden = store.get_mut(net.hidden.weight);
    let width = net.hidden.outputs;
    for (i, w) in hidden.data_mut().iter_mut().enumerate() {
        *w = w.abs() * UNRELIABILITY[i / width];
    }
    for w in store.get_mut(net.out.weight).data_mut() {
        *w = -w.abs();
    }
}

/// Blends an attention score and a cue-derived reliability score per
/// modality, then normalizes across modalities with a softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Reliability {
    /// One network when shared, else one per modality.
    pub score: Vec<Mlp>,
    pub cue: Vec<Mlp>,
    pub alpha: Alpha,
}

impl Reliability {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &FusionConfig, dim: usize, n: usize) -> Self {
        let copies = if cfg.shared_reliability { 1 } else { n };
        let mut score = Vec::with_capacity(copies);
        let mut cue = Vec::with_capacity(copies);
        for k in 0..copies {
            let suffix = if cfg.shared_reliability { alloc::string::String::new() } else { alloc::format!(".{k}") };
            score.push(Mlp::new(store, rng, &["score", &suffix].concat(), dim, cfg.score_hidden, 1));
            let net = Mlp::new(store, rng, &["cue", &suffix].concat(), CUE_ARITY, cfg.cue_hidden, 1);
            orient_cue_net(store, &net);
            cue.push(net);
        }
        let alpha = match cfg.alpha {
            AlphaMode::Learnable(a) => Alpha::Learnable(store.add("alpha", Tensor::scalar((a / (1.0 - a)).ln()))),
            AlphaMode::Fixed(a) => Alpha::Fixed(a),
        };
        Reliability { score, cue, alpha }
    }

    /// Applies one network per modality (or one shared) to `[batch·n, d]`
    /// rows and returns `[batch, n]` scores.
    fn per_modality(&self, tape: &Tape, p: &Bound, nets: &[Mlp], x: Var, batch: usize, n: usize) -> Result<Var> {
        if nets.len() == 1 {
            let s = nets[0].forward(tape, p, x)?;
            return tape.reshape(s, vec![batch, n]);
        }
        let width = tape.shape(x)[1];
        let mut parts = Vec::with_capacity(n);
        for (k, net) in nets.iter().enumerate() {
            let idx = (0..batch).flat_map(|b| ((b * n + k) * width)..((b * n + k + 1) * width)).collect();
            let rows = tape.gather(x, idx, vec![batch, width])?;
            parts.push(net.forward(tape, p, rows)?);
        }
        // modality-major [n·batch, 1] back to [batch, n]
        let stacked = tape.concat(&parts)?;
        let idx = (0..batch).flat_map(|b| (0..n).map(move |k| k * batch + b)).collect();
        tape.gather(stacked, idx, vec![batch, n])
    }

    /// Current mixing coefficient on `tape` as a 1-element variable, or the fixed value.
    fn alpha_var(&self, tape: &Tape, p: &Bound) -> Var {
        match self.alpha {
            Alpha::Learnable(id) => tape.sigmoid(p.var(id)),
            Alpha::Fixed(a) => tape.constant(Tensor::scalar(a)),
        }
    }

    /// `v` is `[batch·n, E]`, `cues` `[batch·n, CUE_ARITY]`; returns simplex
    /// weights `[batch, n]`.
    pub fn weights(&self, tape: &Tape, p: &Bound, v: Var, cues: Var, batch: usize, n: usize) -> Result<Var> {
        let f = self.per_modality(tape, p, &self.score, v, batch, n)?;
        let c = self.per_modality(tape, p, &self.cue, cues, batch, n)?;
        let phi = tape.row_standardize(c, CUE_STD_EPS)?;
        let alpha = self.alpha_var(tape, p);
        let complement = tape.affine(alpha, -1.0, 1.0);
        let mixed = tape.add(tape.scale_by(f, alpha)?, tape.scale_by(phi, complement)?)?;
        tape.row_softmax(mixed)
    }

    /// Mixing coefficient value for the given parameters.
    pub fn alpha_value(&self, store: &ParamStore) -> f64 {
        match self.alpha {
            Alpha::Learnable(id) => crate::autodiff::sigmoid(store.get(id).data()[0]),
            Alpha::Fixed(a) => a,
        }
    }
}

/// Everything downstream of the per-modality embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Fusion {
    pub attention: Attention,
    /// `None` for uniform fixed weights.
    pub reliability: Option<Reliability>,
    pub ffn: Mlp,
    pub head: Linear,
    pub modalities: usize,
    pub classes: usize,
}

/// Batched fusion outputs on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    /// Attended modality rows `[batch·n, E]`.
    pub attended: Var,
    /// Modality weights `[batch, n]`.
    pub weights: Var,
    pub fused: Var,
    pub logits: Var,
}

impl Fusion {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        cfg: &FusionConfig,
        dim: usize,
        modalities: usize,
        classes: usize,
        dynamic_weights: bool,
    ) -> Result<Self> {
        cfg.validate(dim)?;
        if modalities == 0 || classes == 0 {
            return Err(Error::Config("fusion needs at least one modality and one class".into()));
        }
        let attention = Attention::new(store, rng, dim, cfg.heads, cfg.residual);
        let reliability = dynamic_weights.then(|| Reliability::new(store, rng, cfg, dim, modalities));
        Ok(Fusion {
            attention,
            reliability,
            ffn: Mlp::new(store, rng, "ffn", dim, 2 * dim, dim),
            head: Linear::new(store, rng, "head", dim, classes, false),
            modalities,
            classes,
        })
    }

    /// `rows` are the unit-norm embeddings `[batch·n, E]`; `cues` are
    /// `[batch·n, CUE_ARITY]` for the same rows.
    pub fn forward(&self, tape: &Tape, p: &Bound, rows: Var, cues: Var, batch: usize) -> Result<FusionOutput> {
        let n = self.modalities;
        let attended = self.attention.forward(tape, p, rows, batch, n)?;
        let weights = match &self.reliability {
            Some(r) => r.weights(tape, p, attended, cues, batch, n)?,
            None => tape.constant(Tensor::new(vec![batch, n], vec![1.0 / n as f64; batch * n])?),
        };
        let (fused, logits) = self.fuse_and_predict(tape, p, attended, weights, batch)?;
        Ok(FusionOutput {
            attended,
            weights,
            fused,
            logits,
        })
    }

    /// `Z = FFN(Σ_s w_s·v_s)` and `logits = head(Z)`.
    pub fn fuse_and_predict(&self, tape: &Tape, p: &Bound, v: Var, w: Var, batch: usize) -> Result<(Var, Var)> {
        let n = self.modalities;
        let dim = self.attention.dim;
        let w3 = tape.reshape(w, vec![batch, 1, n])?;
        let v3 = tape.reshape(v, vec![batch, n, dim])?;
        let pooled = tape.reshape(tape.batch_matmul(w3, v3, false)?, vec![batch, dim])?;
        let fused = self.ffn.forward(tape, p, pooled)?;
        let logits = self.head.forward(tape, p, fused)?;
        Ok((fused, logits))
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
