//! Modality encoders mapping sensor fields into a shared embedding space.
//!
//! Raw samples are first turned into [`Features`]: ROI patches are cropped
//! and every field is z-scored with statistics frozen on the training split.
//! The encoders then run batched on a [`Tape`].

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math without std
use num_traits::Float;
use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var, PAD};
use crate::error::{Error, Result};
use crate::nn::{he, Bound, Linear, Mlp, ParamId, ParamStore};
use crate::sensors::{BBox, Frame, Modality, Sample, CUE_ARITY};

/// Guard for embedding normalization.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Shared embedding dimension.
    pub embed_dim: usize,
    /// Side length of the square ROI patch fed to the conv stack.
    pub roi_size: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    /// Hidden width of the image MLP head.
    pub image_hidden: usize,
    /// Hidden width of the GPS, HD, posture and pooled-frame MLPs.
    pub vector_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 64,
            roi_size: 16,
            conv1_filters: 8,
            conv2_filters: 16,
            image_hidden: 64,
            vector_hidden: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0
            || self.roi_size < 2
            || self.conv1_filters == 0
            || self.conv2_filters == 0
            || self.image_hidden == 0
            || self.vector_hidden == 0
        {
            return Err(Error::Config("encoder sizes must be positive and roi_size at least 2".into()));
        }
        Ok(())
    }

    fn conv1_out(&self) -> usize {
        conv_out(self.roi_size)
    }

    fn conv2_out(&self) -> usize {
        conv_out(self.conv1_out())
    }

    fn flat_features(&self) -> usize {
        self.conv2_out() * self.conv2_out() * self.conv2_filters
    }
}

/// Output side of a 3×3, stride-2, pad-1 convolution.
fn conv_out(size: usize) -> usize {
    (size + 2 - 3) / 2 + 1
}

/// Bilinear ROI crop result, row-major `height × width × channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    /// Set when the box was narrower or shorter than one pixel and got widened.
    pub clamped: bool,
}

/// Samples the box region of `frame` on an `out_w × out_h` grid, one
/// bilinear sample at the centre of each output cell. Boxes under one pixel
/// wide or tall are widened to one pixel about their centre.
pub fn roi_crop(frame: &Frame, bbox: &BBox, out_w: usize, out_h: usize) -> Result<Patch> {
    if !bbox.is_valid() || out_w == 0 || out_h == 0 {
        return Err(Error::Config("roi_crop needs a valid box and a positive output size".into()));
    }
    let (fw, fh) = (frame.width as f64, frame.height as f64);
    let mut bw = bbox.w * fw;
    let mut bh = bbox.h * fh;
    let mut clamped = false;
    if bw < 1.0 {
        bw = 1.0;
        clamped = true;
    }
    if bh < 1.0 {
        bh = 1.0;
        clamped = true;
    }
    let x0 = bbox.x_c * fw - bw / 2.0;
    let y0 = bbox.y_c * fh - bh / 2.0;
    let c = frame.channels;
    let mut data = Vec::with_capacity(out_w * out_h * c);
    for i in 0..out_h {
        // continuous coordinates put pixel centres at k + 0.5
        let fy = (y0 + (i as f64 + 0.5) * bh / out_h as f64 - 0.5).clamp(0.0, fh - 1.0);
        let (ya, ty) = split(fy, frame.height);
        for j in 0..out_w {
            let fx = (x0 + (j as f64 + 0.5) * bw / out_w as f64 - 0.5).clamp(0.0, fw - 1.0);
            let (xa, tx) = split(fx, frame.width);
            let xb = (xa + 1).min(frame.width - 1);
            let yb = (ya + 1).min(frame.height - 1);
            for ch in 0..c {
                let p = |x: usize, y: usize| frame.at(x, y, ch) as f64;
                let top = p(xa, ya) * (1.0 - tx) + p(xb, ya) * tx;
                let bottom = p(xa, yb) * (1.0 - tx) + p(xb, yb) * tx;
                data.push(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    Ok(Patch {
        width: out_w,
        height: out_h,
        channels: c,
        data,
        clamped,
    })
}

fn split(f: f64, size: usize) -> (usize, f64) {
    let base = (f.floor() as usize).min(size - 1);
    (base, f - base as f64)
}

/// Per-channel mean over the whole frame.
pub fn global_average_pool(frame: &Frame) -> Vec<f64> {
    let mut out = vec![0.0; frame.channels];
    for px in frame.data.chunks(frame.channels) {
        for (o, v) in out.iter_mut().zip(px) {
            *o += *v as f64;
        }
    }
    let n = (frame.width * frame.height) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Frozen z-score transform for one field.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(arity: usize) -> Self {
        Standardizer {
            mean: vec![0.0; arity],
            std: vec![1.0; arity],
        }
    }

    /// Fits per-entry mean and population std. Entries with (near) zero
    /// spread get unit std. No rows gives the identity.
    pub fn fit<I, R>(arity: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let mut sum = vec![0.0; arity];
        let mut sq = vec![0.0; arity];
        let mut n = 0usize;
        for r in rows {
            for (k, v) in r.as_ref().iter().take(arity).enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
            n += 1;
        }
        if n == 0 {
            return Self::identity(arity);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / nf - m * m).max(0.0).sqrt();
                if s > 1e-9 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn arity(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, field: &'static str, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.arity() {
            return Err(Error::Arity {
                field,
                expected: self.arity(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

/// Normalization statistics for every encoder input, fitted on training data.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub gps: Standardizer,
    pub hd: Standardizer,
    pub posture: Standardizer,
    pub bbox: Standardizer,
    /// Pooled full-frame channel means.
    pub frame_mean: Standardizer,
    /// ROI pixel statistics per channel.
    pub roi: Standardizer,
    /// Cue entries pooled over modalities.
    pub cues: Standardizer,
}

impl NormStats {
    pub fn fit(train: &[Sample], roi_size: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("cannot fit normalization statistics on an empty split".into()));
        }
        let mut roi_pixels = Vec::new();
        for s in train {
            if let Some(b) = s.bbox {
                let p = roi_crop(&s.frame, &b, roi_size, roi_size)?;
                roi_pixels.extend(p.data.chunks(p.channels).map(<[f64]>::to_vec));
            }
        }
        let channels = train[0].frame.channels;
        Ok(NormStats {
            gps: Standardizer::fit(2, train.iter().map(|s| s.gps)),
            hd: Standardizer::fit(2, train.iter().map(|s| s.hd)),
            posture: Standardizer::fit(3, train.iter().map(|s| s.posture)),
            bbox: Standardizer::fit(4, train.iter().filter_map(|s| s.bbox.map(BBox::to_array))),
            frame_mean: Standardizer::fit(channels, train.iter().map(|s| global_average_pool(&s.frame))),
            roi: Standardizer::fit(channels, roi_pixels),
            cues: Standardizer::fit(CUE_ARITY, train.iter().flat_map(|s| s.cues)),
        })
    }
}

/// Encoder-ready view of one sample: every field normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    /// Normalized ROI patch, empty when the sample has no box.
    pub patch: Vec<f64>,
    pub bbox: [f64; 4],
    pub frame_mean: Vec<f64>,
    pub gps: [f64; 2],
    pub hd: [f64; 2],
    pub posture: [f64; 3],
    pub cues: [[f64; CUE_ARITY]; 4],
    pub label: usize,
}

impl Features {
    pub fn has_patch(&self) -> bool {
        !self.patch.is_empty()
    }

    pub fn from_sample(sample: &Sample, stats: &NormStats, roi_size: usize) -> Result<Self> {
        let (patch, bbox) = match sample.bbox {
            Some(b) => {
                let p = roi_crop(&sample.frame, &b, roi_size, roi_size)?;
                let mut data = Vec::with_capacity(p.data.len());
                for px in p.data.chunks(p.channels) {
                    data.extend(stats.roi.apply("roi", px)?);
                }
                let nb = stats.bbox.apply("bbox", &b.to_array())?;
                (data, [nb[0], nb[1], nb[2], nb[3]])
            }
            None => (Vec::new(), [0.0; 4]),
        };
        let two = |v: Vec<f64>| [v[0], v[1]];
        let mut cues = [[0.0; CUE_ARITY]; 4];
        for (dst, src) in cues.iter_mut().zip(&sample.cues) {
            dst.copy_from_slice(&stats.cues.apply("cues", src)?);
        }
        let p = stats.posture.apply("posture", &sample.posture)?;
        Ok(Features {
            patch,
            bbox,
            frame_mean: stats.frame_mean.apply("frame", &global_average_pool(&sample.frame))?,
            gps: two(stats.gps.apply("gps", &sample.gps)?),
            hd: two(stats.hd.apply("hd", &sample.hd)?),
            posture: [p[0], p[1], p[2]],
            cues,
            label: sample.label(),
        })
    }
}

/// Flat gather indices lowering a 3×3, stride-2, pad-1 convolution over a
/// batch of square HWC maps to a `[batch·out², 9·channels]` matrix.
fn im2col_index(batch: usize, size: usize, channels: usize) -> Vec<usize> {
    let out = conv_out(size);
    let mut idx = Vec::with_capacity(batch * out * out * 9 * channels);
    for b in 0..batch {
        for oy in 0..out {
            for ox in 0..out {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        let ix = (ox * 2 + kx) as isize - 1;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < size && (ix as usize) < size;
                        for c in 0..channels {
                            idx.push(if inside {
                                ((b * size + iy as usize) * size + ix as usize) * channels + c
                            } else {
                                PAD
                            });
                        }
                    }
                }
            }
        }
    }
    idx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub filters: usize,
}

impl Conv {
    fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_channels: usize, filters: usize) -> Self {
        let weight = store.add(&[name, ".weight"].concat(), he(rng, 9 * in_channels, filters));
        let bias = store.add(&[name, ".bias"].concat(), Tensor::zeros(&[filters]));
        Conv {
            weight,
            bias,
            in_channels,
            filters,
        }
    }

    /// `x` holds `batch` square maps of side `size`, flattened HWC. Returns
    /// `[batch·out², filters]` after the relu.
    fn forward(&self, tape: &Tape, p: &Bound, x: Var, batch: usize, size: usize) -> Result<Var> {
        let out = conv_out(size);
        let cols = tape.gather(
            x,
            im2col_index(batch, size, self.in_channels),
            vec![batch * out * out, 9 * self.in_channels],
        )?;
        let y = tape.matmul(cols, p.var(self.weight))?;
        let y = tape.add_bias(y, p.var(self.bias))?;
        Ok(tape.relu(y))
    }
}

/// ROI path: two conv layers, then an MLP head that also sees the box geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoiPath {
    pub conv1: Conv,
    pub conv2: Conv,
    pub hidden: Linear,
    /// Box coordinates into the hidden layer.
    pub bbox_weight: ParamId,
    pub out: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageEncoder {
    pub roi: Option<RoiPath>,
    /// Fallback over pooled full-frame channel means.
    pub pooled: Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoder {
    Image(ImageEncoder),
    Vector(Mlp),
}

/// One encoder per active modality, in the fixed modality order.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoders {
    pub config: EncoderConfig,
    pub modalities: Vec<Modality>,
    pub encoders: Vec<Encoder>,
}

/// Rejects modality lists that are not a strictly increasing subsequence of
/// (Img, GPS, HD, Pos).
pub fn check_order(modalities: &[Modality]) -> Result<()> {
    if modalities.is_empty() || modalities.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::ModalityOrder);
    }
    Ok(())
}

impl Encoders {
    /// `use_roi = false` builds the image encoder without the ROI path.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        config: &EncoderConfig,
        modalities: &[Modality],
        use_roi: bool,
    ) -> Result<Self> {
        config.validate()?;
        check_order(modalities)?;
        let e = config.embed_dim;
        let vh = config.vector_hidden;
        let encoders = modalities
            .iter()
            .map(|&m| match m {
                Modality::Img => {
                    let roi = use_roi.then(|| {
                        let ih = config.image_hidden;
                        let conv1 = Conv::new(store, rng, "img.conv1", 3, config.conv1_filters);
                        let conv2 = Conv::new(store, rng, "img.conv2", config.conv1_filters, config.conv2_filters);
                        let hidden = Linear::new(store, rng, "img.head.0", config.flat_features(), ih, true);
                        let bbox_weight = store.add("img.head.bbox", he(rng, 4, ih));
                        let out = Linear::new(store, rng, "img.head.1", ih, e, false);
                        RoiPath {
                            conv1,
                            conv2,
                            hidden,
                            bbox_weight,
                            out,
                        }
                    });
                    Encoder::Image(ImageEncoder {
                        roi,
                        pooled: Mlp::new(store, rng, "img.pooled", 3, vh, e),
                    })
                }
                Modality::Gps => Encoder::Vector(Mlp::new(store, rng, "gps", 2, vh, e)),
                Modality::Hd => Encoder::Vector(Mlp::new(store, rng, "hd", 2, vh, e)),
                Modality::Pos => Encoder::Vector(Mlp::new(store, rng, "pos", 3, vh, e)),
            })
            .collect();
        Ok(Encoders {
            config: config.clone(),
            modalities: modalities.to_vec(),
            encoders,
        })
    }

    /// Unnormalized embeddings `[B, E]`, one per active modality.
    pub fn forward(&self, tape: &Tape, p: &Bound, batch: &[&Features]) -> Result<Vec<Var>> {
        if batch.is_empty() {
            return Err(Error::InsufficientBatch { got: 0 });
        }
        self.modalities
            .iter()
            .zip(&self.encoders)
            .map(|(&m, enc)| match enc {
                Encoder::Image(img) => self.encode_image(tape, p, img, batch),
                Encoder::Vector(mlp) => {
                    let x = vector_input(m, batch);
                    let x = tape.constant(x);
                    mlp.forward(tape, p, x)
                }
            })
            .collect()
    }

    /// Runs the ROI path on samples with a patch and the pooled fallback on
    /// the rest, then restores batch order.
    pub fn encode_image(&self, tape: &Tape, p: &Bound, img: &ImageEncoder, batch: &[&Features]) -> Result<Var> {
        let with_roi: Vec<usize> = match img.roi {
            Some(_) => (0..batch.len()).filter(|&i| batch[i].has_patch()).collect(),
            None => Vec::new(),
        };
        let fallback: Vec<usize> = (0..batch.len()).filter(|i| !with_roi.contains(i)).collect();
        let e = self.config.embed_dim;
        let mut parts = Vec::new();
        if let (Some(roi), false) = (img.roi, with_roi.is_empty()) {
            parts.push(self.roi_forward(tape, p, &roi, with_roi.iter().map(|&i| batch[i]))?);
        }
        if !fallback.is_empty() {
            let mut data = Vec::with_capacity(fallback.len() * 3);
            for &i in &fallback {
                if batch[i].frame_mean.len() != 3 {
                    return Err(Error::dim("encode_image", &[batch[i].frame_mean.len()], &[3]));
                }
                data.extend_from_slice(&batch[i].frame_mean);
            }
            let x = tape.constant(Tensor::new(vec![fallback.len(), 3], data)?);
            parts.push(img.pooled.forward(tape, p, x)?);
        }
        let stacked = tape.concat(&parts)?;
        if fallback.is_empty() || with_roi.is_empty() {
            return Ok(stacked);
        }
        // row r of `stacked` holds sample order[r]
        let order: Vec<usize> = with_roi.iter().chain(&fallback).copied().collect();
        let mut pos = vec![0; batch.len()];
        for (r, &i) in order.iter().enumerate() {
            pos[i] = r;
        }
        let index = pos.iter().flat_map(|&r| (r * e)..(r * e + e)).collect();
        tape.gather(stacked, index, vec![batch.len(), e])
    }

    fn roi_forward<'a>(
        &self,
        tape: &Tape,
        p: &Bound,
        roi: &RoiPath,
        items: impl Iterator<Item = &'a Features>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let side = cfg.roi_size;
        let expected = side * side * 3;
        let mut pixels = Vec::new();
        let mut boxes = Vec::new();
        let mut n = 0;
        for f in items {
            if f.patch.len() != expected {
                return Err(Error::dim("encode_image", &[f.patch.len()], &[expected]));
            }
            pixels.extend_from_slice(&f.patch);
            boxes.extend_from_slice(&f.bbox);
            n += 1;
        }
        let x = tape.constant(Tensor::new(vec![n * side * side, 3], pixels)?);
        let h1 = roi.conv1.forward(tape, p, x, n, side)?;
        let h2 = roi.conv2.forward(tape, p, h1, n, cfg.conv1_out())?;
        let flat = tape.reshape(h2, vec![n, cfg.flat_features()])?;
        let boxes = tape.constant(Tensor::new(vec![n, 4], boxes)?);
        let h = roi.hidden.forward(tape, p, flat)?;
        let h = tape.add(h, tape.matmul(boxes, p.var(roi.bbox_weight))?)?;
        let h = tape.relu(h);
        roi.out.forward(tape, p, h)
    }
}

fn vector_input(m: Modality, batch: &[&Features]) -> Tensor {
    let rows: Vec<&[f64]> = batch
        .iter()
        .map(|f| match m {
            Modality::Gps => &f.gps[..],
            Modality::Hd => &f.hd[..],
            _ => &f.posture[..],
        })
        .collect();
    let width = rows[0].len();
    Tensor::new(vec![rows.len(), width], rows.concat()).expect("non-empty batch")
}

/// Raw and unit-norm embeddings of one sample, in modality order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub modalities: Vec<Modality>,
    pub raw: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn get(&self, m: Modality) -> Option<&[f64]> {
        let i = self.modalities.iter().position(|&x| x == m)?;
        Some(&self.normalized[i])
    }
}

/// Raw and normalized embeddings for every sample of `batch`.
pub fn embed_batch(enc: &Encoders, store: &ParamStore, batch: &[&Features]) -> Result<Vec<EmbeddingSet>> {
    let tape = Tape::new();
    let p = store.bind(&tape);
    let raw = enc.forward(&tape, &p, batch)?;
    let norm: Vec<Var> = raw
        .iter()
        .map(|&v| tape.l2_normalize_rows(v, NORM_EPS))
        .collect::<Result<_>>()?;
    let e = enc.config.embed_dim;
    Ok((0..batch.len())
        .map(|b| EmbeddingSet {
            modalities: enc.modalities.clone(),
            raw: raw.iter().map(|&v| tape.value(v).row(b).to_vec()).collect(),
            normalized: norm
                .iter()
                .map(|&v| tape.value(v).data()[b * e..(b + 1) * e].to_vec())
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients_many;
    use crate::channel::UavState;
    use crate::rng::LabRng;
    use crate::sensors::{render_frame, CameraConfig};
    use rand::SeedableRng;

    fn checkerboard() -> Frame {
        let mut f = Frame::filled(4, 4, 1, 0.0);
        for y in 0..4 {
            for x in 0..4 {
                f.set(x, y, 0, ((x + y) % 2) as f32);
            }
        }
        f
    }

    #[test]
    fn full_box_crop_is_an_identity_copy() {
        let st = UavState {
            position: [50.0, 5.0, 20.0],
            velocity: [0.0; 3],
            posture: [0.0; 3],
            time: 0.0,
        };
        let (frame, _) = render_frame(&st, &CameraConfig::default(), 3);
        let full = BBox::from_extent(0.0, 1.0, 0.0, 1.0).unwrap();
        let p = roi_crop(&frame, &full, frame.width, frame.height).unwrap();
        let expected: Vec<f64> = frame.data.iter().map(|&v| v as f64).collect();
        assert_eq!(p.data, expected);
        assert!(!p.clamped);
    }

    #[test]
    fn constant_frame_gives_constant_patch() {
        let f = Frame::filled(8, 8, 3, 0.375);
        let b = BBox::from_extent(0.1, 0.73, 0.2, 0.61).unwrap();
        let p = roi_crop(&f, &b, 5, 3).unwrap();
        assert!(p.data.iter().all(|&v| v == 0.375));
    }

    #[test]
    fn checkerboard_centre_half_matches_hand_samples() {
        let f = checkerboard();
        let b = BBox::from_extent(0.25, 0.75, 0.25, 0.75).unwrap();
        // 2×2 grid over x, y ∈ [1, 3]: cell centres land on pixel centres 1 and 2
        let p = roi_crop(&f, &b, 2, 2).unwrap();
        assert_eq!(p.data, vec![0.0, 1.0, 1.0, 0.0]);
        // 3×3 grid: cell centres at 1 + (j + 0.5)·2/3, index coordinate minus 0.5
        // → 0.8333.., 1.5, 2.1666..; bilinear by hand:
        let p = roi_crop(&f, &b, 3, 3).unwrap();
        let fr = |v: f64| v - v.floor();
        let coords = [1.0 / 3.0 + 0.5, 1.5, 5.0 / 3.0 + 0.5];
        let pixel = |x: usize, y: usize| ((x + y) % 2) as f64;
        for (i, &fy) in coords.iter().enumerate() {
            for (j, &fx) in coords.iter().enumerate() {
                let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
                let (tx, ty) = (fr(fx), fr(fy));
                let v = pixel(x0, y0) * (1.0 - tx) * (1.0 - ty)
                    + pixel(x0 + 1, y0) * tx * (1.0 - ty)
                    + pixel(x0, y0 + 1) * (1.0 - tx) * ty
                    + pixel(x0 + 1, y0 + 1) * tx * ty;
                assert!((p.data[i * 3 + j] - v).abs() < 1e-12, "cell ({i},{j})");
            }
        }
        assert!((p.data[4] - 0.5).abs() < 1e-12);
        assert!(p.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sub_pixel_boxes_are_clamped_and_flagged() {
        let f = checkerboard();
        let b = BBox {
            x_c: 0.5,
            y_c: 0.5,
            w: 0.05,
            h: 0.5,
        };
        let p = roi_crop(&f, &b, 4, 4).unwrap();
        assert!(p.clamped);
        assert!(p.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn standardizer_is_fitted_per_entry() {
        let s = Standardizer::fit(2, [[1.0, 10.0], [3.0, 10.0]]);
        assert_eq!(s.mean, vec![2.0, 10.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.apply("gps", &[3.0, 12.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            s.apply("posture", &[1.0]),
            Err(Error::Arity {
                field: "posture",
                expected: 2,
                got: 1
            })
        );
    }

    fn features(seed: u64, with_patch: bool, cfg: &EncoderConfig) -> Features {
        let mut rng = LabRng::seed_from_u64(seed);
        let side = cfg.roi_size;
        let mut r = || rng.random_range(-1.0..1.0);
        Features {
            patch: if with_patch {
                (0..side * side * 3).map(|_| r()).collect()
            } else {
                Vec::new()
            },
            bbox: [r(), r(), r(), r()],
            frame_mean: vec![r(), r(), r()],
            gps: [r(), r()],
            hd: [r(), r()],
            posture: [r(), r(), r()],
            cues: [[r(), r(), r()]; 4],
            label: 0,
        }
    }

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 6,
            roi_size: 6,
            conv1_filters: 2,
            conv2_filters: 3,
            image_hidden: 5,
            vector_hidden: 4,
        }
    }

    fn build(cfg: &EncoderConfig, mods: &[Modality]) -> (ParamStore, Encoders) {
        let mut store = ParamStore::new();
        let mut rng = LabRng::seed_from_u64(9);
        let enc = Encoders::new(&mut store, &mut rng, cfg, mods, true).unwrap();
        (store, enc)
    }

    #[test]
    fn zero_input_and_zero_biases_give_zero_embeddings() {
        let cfg = small_config();
        let (store, enc) = build(&cfg, &Modality::ALL);
        let mut f = features(1, true, &cfg);
        f.patch.fill(0.0);
        f.bbox = [0.0; 4];
        f.gps = [0.0; 2];
        f.hd = [0.0; 2];
        f.posture = [0.0; 3];
        let tape = Tape::new();
        let p = store.bind(&tape);
        for v in enc.forward(&tape, &p, &[&f]).unwrap() {
            assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let cfg = small_config();
        let (store, enc) = build(&cfg, &Modality::ALL);
        let a = features(2, true, &cfg);
        let b = features(3, false, &cfg);
        let sets = embed_batch(&enc, &store, &[&a, &b, &a]).unwrap();
        for s in &sets {
            for v in &s.normalized {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(sets[0], sets[2]);
        assert_ne!(sets[0].normalized[0], sets[1].normalized[0]);
    }

    #[test]
    fn mixed_batches_keep_sample_order() {
        let cfg = small_config();
        let (store, enc) = build(&cfg, &[Modality::Img]);
        let a = features(4, false, &cfg);
        let b = features(5, true, &cfg);
        let together = embed_batch(&enc, &store, &[&a, &b]).unwrap();
        let alone_a = embed_batch(&enc, &store, &[&a]).unwrap();
        let alone_b = embed_batch(&enc, &store, &[&b]).unwrap();
        assert_eq!(together[0], alone_a[0]);
        assert_eq!(together[1], alone_b[0]);
    }

    #[test]
    fn permuted_modality_order_is_rejected() {
        let mut store = ParamStore::new();
        let mut rng = LabRng::seed_from_u64(1);
        let cfg = small_config();
        let r = Encoders::new(&mut store, &mut rng, &cfg, &[Modality::Gps, Modality::Img], true);
        assert_eq!(r.unwrap_err(), Error::ModalityOrder);
        assert_eq!(check_order(&[Modality::Gps, Modality::Gps]), Err(Error::ModalityOrder));
        assert!(check_order(&[Modality::Img, Modality::Pos]).is_ok());
    }

    #[test]
    fn wrong_patch_size_is_a_dimension_error() {
        let cfg = small_config();
        let (store, enc) = build(&cfg, &[Modality::Img]);
        let mut f = features(6, true, &cfg);
        f.patch.pop();
        let r = embed_batch(&enc, &store, &[&f]);
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    /// Finite-difference check of ‖embedding‖² w.r.t. every parameter of `mods`.
    fn gradcheck_encoder(mods: &[Modality], batch: &[Features]) -> f64 {
        let cfg = small_config();
        let (store, enc) = build(&cfg, mods);
        let refs: Vec<&Features> = batch.iter().collect();
        check_gradients_many(
            |tape, vars| {
                let bound = crate::nn::Bound::from_vars(vars.to_vec());
                let outs = enc.forward(tape, &bound, &refs)?;
                let mut total = None;
                for o in outs {
                    let sq = tape.sum(tape.mul(o, o)?);
                    total = Some(match total {
                        None => sq,
                        Some(t) => tape.add(t, sq)?,
                    });
                }
                Ok(total.unwrap())
            },
            store.tensors(),
            1e-6,
        )
        .unwrap()
    }

    #[test]
    fn image_encoder_gradients_match_finite_differences() {
        let cfg = small_config();
        let batch = [features(7, true, &cfg), features(8, false, &cfg), features(9, true, &cfg)];
        let err = gradcheck_encoder(&[Modality::Img], &batch);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn vector_encoder_gradients_match_finite_differences() {
        let cfg = small_config();
        let batch = [features(10, true, &cfg), features(11, true, &cfg)];
        let err = gradcheck_encoder(&[Modality::Gps, Modality::Hd, Modality::Pos], &batch);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn training_mean_input_gives_zero_embedding_with_zero_biases() {
        let st = UavState {
            position: [60.0, 10.0, 30.0],
            velocity: [0.0; 3],
            posture: [0.1, 0.0, 0.2],
            time: 0.0,
        };
        let (frame, bbox) = render_frame(&st, &CameraConfig::default(), 1);
        let s = Sample::clean(&st, frame, bbox, 0);
        let stats = NormStats::fit(core::slice::from_ref(&s), 16).unwrap();
        let f = Features::from_sample(&s, &stats, 16).unwrap();
        assert_eq!(f.gps, [0.0, 0.0]);
        let cfg = EncoderConfig::default();
        let (store, enc) = build(&cfg, &[Modality::Gps]);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let out = enc.forward(&tape, &p, &[&f]).unwrap();
        assert!(tape.value(out[0]).data().iter().all(|&x| x == 0.0));
    }
}
