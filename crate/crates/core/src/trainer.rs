//! Training loop, chronological split and Top-k evaluation.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math without std
use num_traits::Float;
use rand::seq::SliceRandom;

use crate::autodiff::{Tape, Tensor};
use crate::encoders::Features;
use crate::error::{Error, Result};
use crate::losses::{alignment_loss, task_loss, total_loss, LossConfig};
use crate::model::{Model, ModelConfig, Prediction, Variant};
use crate::nn::ParamStore;
use crate::rng::{stream_rng, Stream};
use crate::sensors::{split_point, Dataset, Modality, Sample};

/// Noise multiplier above which a sample counts as degraded.
pub const DEGRADED_NOISE: f64 = 1.0;

/// Learning rate over the epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate down to zero at the end of the last epoch.
    #[default]
    Cosine,
}

impl LrSchedule {
    /// Rate for 0-based `epoch` of `epochs`.
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let progress = epoch as f64 / epochs as f64;
                0.5 * base * (1.0 + (core::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub split_fraction: f64,
    pub loss: LossConfig,
    pub variant: Variant,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Cosine,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            split_fraction: 0.7,
            loss: LossConfig::default(),
            variant: Variant::Sam2b,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("learning rate must be positive and Adam betas lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config("split_fraction must lie in (0, 1)".into()));
        }
        self.loss.validate()?;
        self.model.validate()
    }
}

/// Chronological split at `floor(N·fraction)`; both sides must be nonempty.
pub fn split(samples: &[Sample], fraction: f64) -> Result<(&[Sample], &[Sample])> {
    if samples.is_empty() {
        return Err(Error::Config("cannot split an empty dataset".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config("split fraction must lie in (0, 1)".into()));
    }
    let at = split_point(samples.len(), fraction);
    if at == 0 || at == samples.len() {
        return Err(Error::Config("split leaves the train or test side empty".into()));
    }
    Ok(samples.split_at(at))
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one update; `None` gradients leave the parameter untouched.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (param, grad)) in store.tensors_mut().iter_mut().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (i, (w, g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Test Top-1 after the epoch.
    pub top1: f64,
}

/// Position of `label` when classes are ranked by descending score, ties
/// going to the lower index.
pub fn rank_of(scores: &[f64], label: usize) -> usize {
    let target = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > target || (s == target && j < label))
        .count()
}

pub fn top_k_hit(scores: &[f64], label: usize, k: usize) -> bool {
    rank_of(scores, label) < k
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub count: usize,
    pub top1: f64,
    pub top2: f64,
    pub top3: f64,
    pub modalities: Vec<Modality>,
    /// Mean modality weights over clean test samples, `None` if there are none.
    pub clean_weights: Option<Vec<f64>>,
    pub degraded_weights: Option<Vec<f64>>,
    pub clean_count: usize,
    pub degraded_count: usize,
}

/// Top-1/2/3 over `(logits, label)` pairs.
pub fn top_k_accuracy<'a>(pairs: impl IntoIterator<Item = (&'a [f64], usize)>) -> (usize, [f64; 3]) {
    let mut hits = [0usize; 3];
    let mut n = 0;
    for (logits, label) in pairs {
        let r = rank_of(logits, label);
        for (k, h) in hits.iter_mut().enumerate() {
            if r <= k {
                *h += 1;
            }
        }
        n += 1;
    }
    let frac = |h: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    (n, [frac(hits[0]), frac(hits[1]), frac(hits[2])])
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; width];
    let mut n = 0usize;
    for r in rows {
        acc.iter_mut().zip(r).for_each(|(a, x)| *a += x);
        n += 1;
    }
    (n > 0).then(|| acc.iter().map(|a| a / n as f64).collect())
}

/// Metrics from predictions and the samples they came from.
pub fn metrics_from(modalities: &[Modality], samples: &[Sample], preds: &[Prediction]) -> Metrics {
    let (count, [top1, top2, top3]) =
        top_k_accuracy(preds.iter().zip(samples).map(|(p, s)| (&p.logits[..], s.label())));
    let n = modalities.len();
    let degraded: Vec<bool> = samples.iter().map(|s| s.is_degraded(DEGRADED_NOISE)).collect();
    let pick = |want: bool| {
        mean_rows(
            preds
                .iter()
                .zip(&degraded)
                .filter(move |(_, &d)| d == want)
                .map(|(p, _)| &p.weights[..]),
            n,
        )
    };
    Metrics {
        count,
        top1,
        top2,
        top3,
        modalities: modalities.to_vec(),
        clean_weights: pick(false),
        degraded_weights: pick(true),
        clean_count: degraded.iter().filter(|d| !**d).count(),
        degraded_count: degraded.iter().filter(|d| **d).count(),
    }
}

pub fn evaluate(model: &Model, test: &[Sample]) -> Result<Metrics> {
    let preds = model.predict(&model.features_all(test)?)?;
    Ok(metrics_from(model.modalities(), test, &preds))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Final metrics on the test split.
    pub metrics: Metrics,
}

/// Runs one optimization pass over `order`; returns the mean batch loss.
fn run_epoch(
    model: &mut Model,
    adam: &mut Adam,
    features: &[Features],
    order: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(cfg.batch_size) {
        // an in-batch contrastive term needs at least one negative
        if chunk.len() < 2 {
            continue;
        }
        let batch: Vec<&Features> = chunk.iter().map(|&i| &features[i]).collect();
        let labels: Vec<usize> = batch.iter().map(|f| f.label).collect();
        let tape = Tape::new();
        let p = model.store.bind(&tape);
        let fp = model.forward(&tape, &p, &batch)?;
        let task = task_loss(&tape, fp.logits, &labels)?;
        let loss = if cfg.loss.beta == 0.0 {
            task
        } else {
            let align = alignment_loss(&tape, &fp.embeddings, cfg.loss.theta)?;
            total_loss(&tape, task, align, &cfg.loss)?
        };
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::TrainingFailure { epoch });
        }
        tape.backward(loss)?;
        let grads: Vec<Option<Tensor>> = p.vars().iter().map(|&v| tape.grad(v)).collect();
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::TrainingFailure { epoch });
        }
        adam.update(&mut model.store, &grads);
        total += value;
        batches += 1;
    }
    if batches == 0 {
        return Err(Error::InsufficientBatch { got: order.len() });
    }
    Ok(total / batches as f64)
}

/// Trains `cfg.variant` on the chronological train split of `ds` and
/// reports test metrics. Every random choice derives from `cfg.seed`.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_on(&ds.samples, ds.codebook_size(), cfg)
}

pub fn train_on(samples: &[Sample], classes: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, test_set) = split(samples, cfg.split_fraction)?;
    for s in samples {
        if s.label() >= classes {
            return Err(Error::Index {
                label: s.label(),
                classes,
            });
        }
    }
    let mut model = Model::new(&cfg.model, cfg.variant, classes, cfg.seed)?;
    model.fit_stats(train_set)?;
    let train_features = model.features_all(train_set)?;
    let test_features = model.features_all(test_set)?;
    let mut adam = Adam::new(&model.store, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut order: Vec<usize> = (0..train_features.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut metrics = Metrics::default();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, epoch as u64));
        adam.lr = cfg.lr_schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        let loss = run_epoch(&mut model, &mut adam, &train_features, &order, cfg, epoch + 1)?;
        let preds = model.predict(&test_features)?;
        metrics = metrics_from(model.modalities(), test_set, &preds);
        log.push(EpochLog {
            epoch: epoch + 1,
            loss,
            top1: metrics.top1,
        });
    }
    Ok(TrainOutcome { model, log, metrics })
}
