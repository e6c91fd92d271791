//! The full beam predictor: encoders, fusion and head behind one handle,
//! plus the ablation variants.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::autodiff::{Tape, Tensor, Var};
use crate::encoders::{EncoderConfig, Encoders, Features, NormStats, NORM_EPS};
use crate::error::{Error, Result};
use crate::fusion::{argmax, similarity_matrix, Fusion, FusionConfig};
use crate::nn::{Bound, ParamStore};
use crate::rng::{stream_rng, Stream};
use crate::sensors::{Modality, Sample, CUE_ARITY};

/// Model family members compared in the ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// All modalities with reliability-aware weighting.
    Sam2b,
    /// All modalities, uniform weights, no cues.
    FixedWeight,
    /// Image path restricted to the pooled full frame.
    NoBbox,
    /// Image and GPS only.
    MmAid,
    Single(Modality),
    /// GPS and height/distance.
    GeometryOnly,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Sam2b,
        Variant::FixedWeight,
        Variant::NoBbox,
        Variant::MmAid,
        Variant::Single(Modality::Img),
        Variant::Single(Modality::Gps),
        Variant::Single(Modality::Hd),
        Variant::Single(Modality::Pos),
        Variant::GeometryOnly,
    ];

    pub fn modalities(self) -> Vec<Modality> {
        match self {
            Variant::Sam2b | Variant::FixedWeight | Variant::NoBbox => Modality::ALL.to_vec(),
            Variant::MmAid => vec![Modality::Img, Modality::Gps],
            Variant::Single(m) => vec![m],
            Variant::GeometryOnly => vec![Modality::Gps, Modality::Hd],
        }
    }

    pub fn dynamic_weights(self) -> bool {
        self != Variant::FixedWeight
    }

    pub fn uses_roi(self) -> bool {
        self != Variant::NoBbox
    }

    pub fn name(self) -> String {
        match self {
            Variant::Sam2b => "sam2b".into(),
            Variant::FixedWeight => "fixed_weight".into(),
            Variant::NoBbox => "no_bbox".into(),
            Variant::MmAid => "mm_aid".into(),
            Variant::Single(m) => format!("single_{}", m.name()),
            Variant::GeometryOnly => "geometry_only".into(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.fusion.validate(self.encoder.embed_dim)
    }
}

/// Tape handles produced by one batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Unit-norm embeddings `[B, E]`, one per active modality.
    pub embeddings: Vec<Var>,
    /// Modality weights `[B, n]`.
    pub weights: Var,
    pub logits: Var,
}

/// Per-sample inference result.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    /// One weight per active modality.
    pub weights: Vec<f64>,
    pub similarity: Vec<Vec<f64>>,
    /// Unit-norm embeddings in modality order.
    pub embeddings: Vec<Vec<f64>>,
    pub beam: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub variant: Variant,
    pub classes: usize,
    pub store: ParamStore,
    pub encoders: Encoders,
    pub fusion: Fusion,
    /// Frozen input statistics; `None` until fitted.
    pub stats: Option<NormStats>,
}

impl Model {
    /// Builds and initializes a model. Initialization draws from the
    /// `Init` stream of `seed` only.
    pub fn new(config: &ModelConfig, variant: Variant, classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let mut store = ParamStore::new();
        let modalities = variant.modalities();
        let encoders = Encoders::new(&mut store, &mut rng, &config.encoder, &modalities, variant.uses_roi())?;
        let fusion = Fusion::new(
            &mut store,
            &mut rng,
            &config.fusion,
            config.encoder.embed_dim,
            modalities.len(),
            classes,
            variant.dynamic_weights(),
        )?;
        Ok(Model {
            config: config.clone(),
            variant,
            classes,
            store,
            encoders,
            fusion,
            stats: None,
        })
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.encoders.modalities
    }

    pub fn fit_stats(&mut self, train: &[Sample]) -> Result<()> {
        self.stats = Some(NormStats::fit(train, self.config.encoder.roi_size)?);
        Ok(())
    }

    pub fn features(&self, sample: &Sample) -> Result<Features> {
        let stats = self.stats.as_ref().ok_or(Error::NotFitted)?;
        Features::from_sample(sample, stats, self.config.encoder.roi_size)
    }

    pub fn features_all(&self, samples: &[Sample]) -> Result<Vec<Features>> {
        samples.iter().map(|s| self.features(s)).collect()
    }

    /// Batched forward pass on `tape` with parameters bound as `p`.
    pub fn forward(&self, tape: &Tape, p: &Bound, batch: &[&Features]) -> Result<ForwardPass> {
        let b = batch.len();
        let raw = self.encoders.forward(tape, p, batch)?;
        let embeddings = raw
            .iter()
            .map(|&v| tape.l2_normalize_rows(v, NORM_EPS))
            .collect::<Result<Vec<_>>>()?;
        let n = embeddings.len();
        let e = self.config.encoder.embed_dim;
        // interleave to rows b·n + s
        let stacked = tape.concat(&embeddings)?;
        let index = (0..b)
            .flat_map(|bi| (0..n).flat_map(move |s| ((s * b + bi) * e)..((s * b + bi + 1) * e)))
            .collect();
        let rows = tape.gather(stacked, index, vec![b * n, e])?;
        let mut cues = Vec::with_capacity(b * n * CUE_ARITY);
        for f in batch {
            for m in self.modalities() {
                cues.extend_from_slice(&f.cues[m.index()]);
            }
        }
        let cues = tape.constant(Tensor::new(vec![b * n, CUE_ARITY], cues)?);
        let out = self.fusion.forward(tape, p, rows, cues, b)?;
        Ok(ForwardPass {
            embeddings,
            weights: out.weights,
            logits: out.logits,
        })
    }

    /// Inference on prepared features, chunked to bound tape size.
    pub fn predict(&self, features: &[Features]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(features.len());
        for chunk in features.chunks(256) {
            let refs: Vec<&Features> = chunk.iter().collect();
            let tape = Tape::new();
            let p = self.store.bind(&tape);
            let fp = self.forward(&tape, &p, &refs)?;
            let logits = tape.value(fp.logits);
            let weights = tape.value(fp.weights);
            let n = self.modalities().len();
            let e = self.config.encoder.embed_dim;
            for i in 0..chunk.len() {
                let embeddings: Vec<Vec<f64>> = fp
                    .embeddings
                    .iter()
                    .map(|&v| tape.value(v).data()[i * e..(i + 1) * e].to_vec())
                    .collect();
                let l = logits.row(i).to_vec();
                out.push(Prediction {
                    beam: argmax(&l),
                    logits: l,
                    weights: weights.data()[i * n..(i + 1) * n].to_vec(),
                    similarity: similarity_matrix(&embeddings),
                    embeddings,
                });
            }
        }
        Ok(out)
    }

    /// Full pipeline on one raw sample.
    pub fn forward_sample(&self, sample: &Sample) -> Result<Prediction> {
        let f = self.features(sample)?;
        Ok(self.predict(core::slice::from_ref(&f))?.remove(0))
    }

    /// Current attention/reliability mixing coefficient, if the variant weights dynamically.
    pub fn alpha(&self) -> Option<f64> {
        self.fusion.reliability.as_ref().map(|r| r.alpha_value(&self.store))
    }
}
