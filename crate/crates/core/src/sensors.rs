//! Sensor rendering, degradation injection and dataset assembly.
//!
//! A clean [`Sample`] is rendered from simulator ground truth; a
//! [`Degrader`] then corrupts it according to a [`DegradationProfile`] and
//! fills in the per-modality quality cues. The degrader consumes a fixed
//! number of random draws per sample whatever the profile, so two datasets
//! generated from the same seed with different profiles are sample-by-sample
//! paired: they differ only in the injected levels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math without std
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{
    make_codebook, oracle_beam, sample_trajectory, synth_channel, ChannelConfig, TrajectoryConfig, UavState,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, LabRng, Stream};

/// Sensing modalities in their fixed order: image, GPS, height/distance, posture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Img = 0,
    Gps = 1,
    Hd = 2,
    Pos = 3,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Img, Modality::Gps, Modality::Hd, Modality::Pos];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Img => "img",
            Modality::Gps => "gps",
            Modality::Hd => "hd",
            Modality::Pos => "pos",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Noise standard deviation at multiplier 1: metres for GPS and HD,
    /// radians for posture, intensity for image pixels.
    pub fn base_noise(self) -> f64 {
        match self {
            Modality::Img => 0.05,
            Modality::Gps => 1.0,
            Modality::Hd => 1.0,
            Modality::Pos => 0.05,
        }
    }
}

/// Entries per modality in [`QualityCues`]: noise estimate, staleness, validity.
pub const CUE_ARITY: usize = 3;
/// Entries per modality in [`DegradationTruth`]: noise, staleness, dropped, occlusion.
pub const TRUTH_ARITY: usize = 4;
/// Relative error of the noise-scale cue.
pub const CUE_NOISE: f64 = 0.2;
/// Bounding-box centre jitter in pixels at image noise multiplier 1.
pub const BBOX_JITTER_PX: f64 = 0.5;

pub type QualityCues = [[f64; CUE_ARITY]; 4];
pub type DegradationTruth = [[f64; TRUTH_ARITY]; 4];

/// Camera image, row-major `height × width × channels`, intensities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Frame {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        let i = (y * self.width + x) * self.channels + c;
        self.data[i] = v;
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Normalized box `[x_c, y_c, w, h]`, all in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x_c: f64,
    pub y_c: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Box spanning `[x0, x1] × [y0, y1]` after clipping to the unit square.
    /// `None` when nothing remains.
    pub fn from_extent(x0: f64, x1: f64, y0: f64, y1: f64) -> Option<Self> {
        let (x0, x1) = (x0.max(0.0), x1.min(1.0));
        let (y0, y1) = (y0.max(0.0), y1.min(1.0));
        if !(x1 > x0) || !(y1 > y0) {
            return None;
        }
        Some(BBox {
            x_c: 0.5 * (x0 + x1),
            y_c: 0.5 * (y0 + y1),
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    pub fn is_valid(&self) -> bool {
        let tol = 1e-12;
        self.w >= 0.0
            && self.h >= 0.0
            && self.x_c - self.w / 2.0 >= -tol
            && self.x_c + self.w / 2.0 <= 1.0 + tol
            && self.y_c - self.h / 2.0 >= -tol
            && self.y_c + self.h / 2.0 <= 1.0 + tol
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_c, self.y_c, self.w, self.h]
    }
}

/// Pinhole camera co-located with the array, looking along +x and tilted up.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, radians. Pixels are square.
    pub hfov: f64,
    /// Upward tilt of the optical axis, radians.
    pub tilt: f64,
    /// Apparent UAV radius in metres; sets the blob size.
    pub uav_radius: f64,
    /// Number of background rectangles.
    pub clutter_objects: usize,
    /// Maximum clutter intensity.
    pub clutter_level: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            width: 32,
            height: 32,
            hfov: 100f64.to_radians(),
            tilt: 0.45,
            uav_radius: 3.0,
            clutter_objects: 4,
            clutter_level: 0.4,
        }
    }
}

impl CameraConfig {
    pub const CHANNELS: usize = 3;

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("camera: width and height must be positive".into()));
        }
        if !(self.hfov > 0.0 && self.hfov < core::f64::consts::PI) || !(self.uav_radius > 0.0) {
            return Err(Error::Config("camera: hfov must lie in (0, π) and uav_radius be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.clutter_level) {
            return Err(Error::Config("camera: clutter_level must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn focal_px(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.hfov).tan()
    }

    /// Pixel coordinates (column, row) and depth of a world point, or `None`
    /// when it lies behind the image plane.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        let (ct, st) = (self.tilt.cos(), self.tilt.sin());
        let depth = p[0] * ct + p[2] * st;
        if !(depth > 1e-6) {
            return None;
        }
        let up = -p[0] * st + p[2] * ct;
        let f = self.focal_px();
        let u = 0.5 * self.width as f64 - f * p[1] / depth;
        let v = 0.5 * self.height as f64 - f * up / depth;
        Some((u, v, depth))
    }
}

/// Renders the base-station camera view: random background clutter and the
/// UAV as a bright Gaussian blob. The box spans ±3σ of the blob, clipped to
/// the frame; it is absent when the UAV is behind the camera or off-frame.
pub fn render_frame(state: &UavState, camera: &CameraConfig, clutter_seed: u64) -> (Frame, Option<BBox>) {
    let mut rng = LabRng::seed_from_u64(clutter_seed);
    let (w, h, c) = (camera.width, camera.height, CameraConfig::CHANNELS);
    let mut frame = Frame::filled(w, h, c, 0.0);

    let sky: [f64; 3] = [0.10, 0.14, 0.22];
    let ground: [f64; 3] = [0.16, 0.13, 0.10];
    for y in 0..h {
        let t = y as f64 / h as f64;
        for x in 0..w {
            for ch in 0..c {
                let base = sky[ch] * (1.0 - t) + ground[ch] * t;
                frame.set(x, y, ch, base as f32);
            }
        }
    }
    for _ in 0..camera.clutter_objects {
        let x0 = rng.random_range(0..w);
        let y0 = rng.random_range(0..h);
        let x1 = (x0 + rng.random_range(1..=w.div_ceil(3))).min(w);
        let y1 = (y0 + rng.random_range(1..=h.div_ceil(3))).min(h);
        let level = rng.random_range(0.0..=camera.clutter_level);
        let tint: [f64; 3] = [rng.random_range(0.7..1.0), rng.random_range(0.7..1.0), rng.random_range(0.7..1.0)];
        for y in y0..y1 {
            for x in x0..x1 {
                for (ch, t) in tint.iter().enumerate() {
                    frame.set(x, y, ch, (level * t) as f32);
                }
            }
        }
    }
    for v in frame.data.iter_mut() {
        *v = (*v + rng.random_range(-0.02f32..0.02)).clamp(0.0, 1.0);
    }

    let Some((u, v, depth)) = camera.project(state.position) else {
        return (frame, None);
    };
    let sigma = (camera.focal_px() * camera.uav_radius / depth).max(0.5);
    let bbox = BBox::from_extent(
        (u - 3.0 * sigma) / w as f64,
        (u + 3.0 * sigma) / w as f64,
        (v - 3.0 * sigma) / h as f64,
        (v + 3.0 * sigma) / h as f64,
    );
    if bbox.is_none() {
        return (frame, None);
    }
    let colour = [1.0, 0.95, 0.85];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - u;
            let dy = y as f64 + 0.5 - v;
            let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            if g < 1e-4 {
                continue;
            }
            for (ch, col) in colour.iter().enumerate() {
                let cur = frame.at(x, y, ch) as f64;
                frame.set(x, y, ch, cur.max(col * g).clamp(0.0, 1.0) as f32);
            }
        }
    }
    (frame, bbox)
}

/// One time step of multi-modal readings.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub frame: Frame,
    pub bbox: Option<BBox>,
    /// Local planar position (x, y) in metres.
    pub gps: [f64; 2],
    /// Height above the base station and horizontal distance, metres.
    pub hd: [f64; 2],
    /// Roll, pitch, yaw in radians.
    pub posture: [f64; 3],
    pub cues: QualityCues,
    /// Injected degradation levels. Evaluation only; never a model input.
    pub truth: DegradationTruth,
    pub label: u16,
    pub time: f64,
}

impl Sample {
    /// Noise-free readings of `state`, with cues marking every fresh modality valid.
    pub fn clean(state: &UavState, frame: Frame, bbox: Option<BBox>, label: u16) -> Self {
        let [x, y, z] = state.position;
        let mut cues = [[0.0, 0.0, 1.0]; 4];
        if bbox.is_none() {
            cues[Modality::Img.index()][2] = 0.0;
        }
        Sample {
            frame,
            bbox,
            gps: [x, y],
            hd: [z, (x * x + y * y).sqrt()],
            posture: state.posture,
            cues,
            truth: [[0.0; TRUTH_ARITY]; 4],
            label,
            time: state.time,
        }
    }

    pub fn label(&self) -> usize {
        self.label as usize
    }

    /// True when any modality carries injected noise above `noise_threshold`
    /// (in base-noise multiples), or is dropped, stale or occluded.
    pub fn is_degraded(&self, noise_threshold: f64) -> bool {
        self.truth
            .iter()
            .any(|t| t[0] > noise_threshold || t[1] > 0.0 || t[2] > 0.0 || t[3] > 0.0)
    }
}

/// Degradation levels for one modality.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModalityProfile {
    /// Noise standard deviation as a multiple of [`Modality::base_noise`].
    pub noise: f64,
    /// Probability the reading is lost (held value, validity 0).
    pub dropout: f64,
    /// Fraction of the frame area covered by an occluder. Image only.
    pub occlusion: f64,
    /// Probability the reading is not refreshed (held value, validity 1).
    pub stale: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DegradationProfile {
    pub modalities: [ModalityProfile; 4],
}

impl DegradationProfile {
    pub fn none() -> Self {
        Self::default()
    }

    /// Base-level sensor noise on every modality and nothing else.
    pub fn nominal() -> Self {
        let mut p = Self::default();
        for m in p.modalities.iter_mut() {
            m.noise = 1.0;
        }
        p
    }

    pub fn get(&self, m: Modality) -> &ModalityProfile {
        &self.modalities[m.index()]
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut ModalityProfile {
        &mut self.modalities[m.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for (m, p) in Modality::ALL.iter().zip(&self.modalities) {
            let prob = |v: f64| (0.0..=1.0).contains(&v);
            if !(p.noise >= 0.0) || !prob(p.dropout) || !prob(p.occlusion) || !prob(p.stale) {
                return Err(Error::Config(format!(
                    "degradation profile for {}: probabilities must lie in [0, 1] and noise be non-negative",
                    m.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Held {
    frame: Frame,
    bbox: Option<BBox>,
    values: [f64; 3],
    occlusion: f64,
}

/// Stateful degradation across consecutive samples: dropped and stale
/// readings hold the last delivered value.
#[derive(Clone, Debug, Default)]
pub struct Degrader {
    held: [Option<Held>; 4],
    staleness: [u32; 4],
}

impl Degrader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply<R: Rng>(&mut self, sample: &Sample, profile: &DegradationProfile, rng: &mut R) -> Sample {
        let mut out = sample.clone();
        for m in Modality::ALL {
            let p = *profile.get(m);
            let i = m.index();
            let std = p.noise * m.base_noise();

            // fixed draw schedule, independent of the profile values
            let mut fresh = Held {
                frame: sample.frame.clone(),
                bbox: sample.bbox,
                values: [0.0; 3],
                occlusion: 0.0,
            };
            match m {
                Modality::Img => {
                    for v in fresh.frame.data.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = (*v + (std * z) as f32).clamp(0.0, 1.0);
                    }
                    let jx: f64 = StandardNormal.sample(rng);
                    let jy: f64 = StandardNormal.sample(rng);
                    let occ: [f64; 4] = [rng.random(), rng.random(), rng.random(), rng.random()];
                    if let Some(b) = sample.bbox {
                        let jitter = p.noise * BBOX_JITTER_PX;
                        let dx = jitter * jx / sample.frame.width as f64;
                        let dy = jitter * jy / sample.frame.height as f64;
                        fresh.bbox = BBox::from_extent(
                            b.x_c + dx - b.w / 2.0,
                            b.x_c + dx + b.w / 2.0,
                            b.y_c + dy - b.h / 2.0,
                            b.y_c + dy + b.h / 2.0,
                        );
                    }
                    if p.occlusion > 0.0 {
                        occlude(&mut fresh.frame, p.occlusion, occ);
                        fresh.occlusion = p.occlusion;
                    }
                }
                _ => {
                    let clean: &[f64] = match m {
                        Modality::Gps => &sample.gps,
                        Modality::Hd => &sample.hd,
                        _ => &sample.posture,
                    };
                    for (k, &c) in clean.iter().enumerate() {
                        let z: f64 = StandardNormal.sample(rng);
                        fresh.values[k] = c + std * z;
                    }
                }
            }
            let u_drop: f64 = rng.random();
            let u_stale: f64 = rng.random();
            let cue_z: f64 = StandardNormal.sample(rng);

            let dropped = u_drop < p.dropout;
            let stale = !dropped && u_stale < p.stale;
            let delivered = if dropped || stale {
                self.staleness[i] += 1;
                self.held[i].get_or_insert(fresh).clone()
            } else {
                self.staleness[i] = 0;
                self.held[i] = Some(fresh.clone());
                fresh
            };

            let mut valid = if dropped { 0.0 } else { 1.0 };
            match m {
                Modality::Img => {
                    if delivered.bbox.is_none() {
                        valid = 0.0;
                    }
                    out.frame = delivered.frame;
                    out.bbox = delivered.bbox;
                }
                Modality::Gps => out.gps.copy_from_slice(&delivered.values[..2]),
                Modality::Hd => out.hd.copy_from_slice(&delivered.values[..2]),
                Modality::Pos => out.posture.copy_from_slice(&delivered.values),
            }
            out.cues[i] = [
                (p.noise * (1.0 + CUE_NOISE * cue_z)).max(0.0),
                self.staleness[i] as f64,
                valid,
            ];
            out.truth[i] = [
                p.noise,
                self.staleness[i] as f64,
                if dropped { 1.0 } else { 0.0 },
                delivered.occlusion,
            ];
        }
        out
    }
}

/// Single-sample degradation with no history.
pub fn degrade<R: Rng>(sample: &Sample, profile: &DegradationProfile, rng: &mut R) -> Sample {
    Degrader::new().apply(sample, profile, rng)
}

/// Covers a random rectangle of `fraction` of the frame area with a flat grey.
fn occlude(frame: &mut Frame, fraction: f64, u: [f64; 4]) {
    let (w, h) = (frame.width as f64, frame.height as f64);
    let aspect = 0.5 + u[0];
    let ow = (fraction * w * h * aspect).sqrt().min(w);
    let oh = (fraction * w * h / ow).min(h);
    let x0 = u[1] * (w - ow);
    let y0 = u[2] * (h - oh);
    let grey = (0.2 + 0.6 * u[3]) as f32;
    let (xa, xb) = (x0.round() as usize, ((x0 + ow).round() as usize).min(frame.width));
    let (ya, yb) = (y0.round() as usize, ((y0 + oh).round() as usize).min(frame.height));
    for y in ya..yb {
        for x in xa..xb {
            for c in 0..frame.channels {
                frame.set(x, y, c, grey);
            }
        }
    }
}

/// Profile mixture active from `start` (fraction of the timeline) onwards.
#[derive(Clone, Debug, PartialEq)]
pub struct SchedulePhase {
    pub start: f64,
    /// `(weight, profile)` choices drawn independently per sample.
    pub choices: Vec<(f64, DegradationProfile)>,
}

/// Time-varying degradation: phases ordered by start fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSchedule {
    pub phases: Vec<SchedulePhase>,
}

impl DegradationSchedule {
    pub fn constant(profile: DegradationProfile) -> Self {
        DegradationSchedule {
            phases: vec![SchedulePhase {
                start: 0.0,
                choices: vec![(1.0, profile)],
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.phases.first() else {
            return Err(Error::Config("degradation schedule has no phases".into()));
        };
        if first.start != 0.0 {
            return Err(Error::Config("the first degradation phase must start at 0".into()));
        }
        for w in self.phases.windows(2) {
            if !(w[1].start > w[0].start) {
                return Err(Error::Config("degradation phases must have increasing starts".into()));
            }
        }
        for phase in &self.phases {
            if phase.choices.is_empty() || phase.choices.iter().any(|(w, _)| !(*w > 0.0)) {
                return Err(Error::Config("each degradation phase needs positive-weight choices".into()));
            }
            for (_, p) in &phase.choices {
                p.validate()?;
            }
        }
        Ok(())
    }

    /// Profile for timeline position `fraction`, using uniform draw `u`.
    pub fn pick(&self, fraction: f64, u: f64) -> &DegradationProfile {
        let phase = self
            .phases
            .iter()
            .rev()
            .find(|p| p.start <= fraction)
            .unwrap_or(&self.phases[0]);
        let total: f64 = phase.choices.iter().map(|c| c.0).sum();
        let mut acc = 0.0;
        for (w, p) in &phase.choices {
            acc += w / total;
            if u < acc {
                return p;
            }
        }
        &phase.choices[phase.choices.len() - 1].1
    }
}

impl Default for DegradationSchedule {
    fn default() -> Self {
        Self::constant(DegradationProfile::nominal())
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub trajectory: TrajectoryConfig,
    pub channel: ChannelConfig,
    pub camera: CameraConfig,
    pub schedule: DegradationSchedule,
    pub seed: u64,
    /// Chronological train fraction.
    pub split_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            trajectory: TrajectoryConfig::default(),
            channel: ChannelConfig::default(),
            camera: CameraConfig::default(),
            schedule: DegradationSchedule::default(),
            seed: 0,
            split_fraction: 0.7,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.trajectory.validate()?;
        self.channel.validate()?;
        self.camera.validate()?;
        self.schedule.validate()?;
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config("split_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn codebook_size(&self) -> usize {
        self.config.channel.codebook_size
    }

    /// First test index of the chronological split, `floor(N·fraction)`.
    pub fn split_index(&self) -> usize {
        split_point(self.len(), self.config.split_fraction)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.codebook_size()];
        for s in &self.samples {
            if let Some(h) = hist.get_mut(s.label()) {
                *h += 1;
            }
        }
        hist
    }
}

pub(crate) fn split_point(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).floor() as usize
}

/// Simulates the scenario step by step: channel, oracle label, rendered
/// sensors, then degradation. Every random stream derives from `cfg.seed`.
pub fn build_dataset(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    let traj = sample_trajectory(&cfg.trajectory, &mut stream_rng(cfg.seed, Stream::Trajectory, 0))?;
    let ch = &cfg.channel;
    let codebook = make_codebook(ch.antennas, ch.codebook_size, ch.antenna_spacing);
    let mut degrader = Degrader::new();
    let n = traj.len();
    let mut samples = Vec::with_capacity(n);
    for (i, state) in traj.iter().enumerate() {
        let idx = i as u64;
        let h = synth_channel(state, ch, &mut stream_rng(cfg.seed, Stream::Channel, idx))?;
        let label = oracle_beam(&h, &codebook, ch.tx_power, ch.noise_power)? as u16;
        let (frame, bbox) = render_frame(state, &cfg.camera, derive_seed(cfg.seed, Stream::Clutter, idx));
        let clean = Sample::clean(state, frame, bbox, label);
        let mut rng = stream_rng(cfg.seed, Stream::Degradation, idx);
        let profile = cfg.schedule.pick(i as f64 / n as f64, rng.random());
        samples.push(degrader.apply(&clean, profile, &mut rng));
    }
    Ok(Dataset {
        config: cfg.clone(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::direction_sine;

    fn state_at(p: [f64; 3]) -> UavState {
        UavState {
            position: p,
            velocity: [0.0; 3],
            posture: [0.01, -0.02, 0.3],
            time: 1.5,
        }
    }

    fn small_scenario(steps: usize) -> ScenarioConfig {
        ScenarioConfig {
            trajectory: TrajectoryConfig {
                duration: steps as f64 * 0.5,
                ..TrajectoryConfig::default()
            },
            seed: 11,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn optical_axis_projects_to_the_centre() {
        let cam = CameraConfig::default();
        let d = 40.0;
        let p = [d * cam.tilt.cos(), 0.0, d * cam.tilt.sin()];
        let (frame, bbox) = render_frame(&state_at(p), &cam, 1);
        let b = bbox.unwrap();
        assert!((b.x_c - 0.5).abs() < 1e-12 && (b.y_c - 0.5).abs() < 1e-12);
        assert!(frame.in_range());
        assert!(b.is_valid());
    }

    #[test]
    fn doubling_distance_halves_the_box() {
        let cam = CameraConfig::default();
        let dir = [cam.tilt.cos(), 0.0, cam.tilt.sin()];
        let near = render_frame(&state_at(dir.map(|v| v * 15.0)), &cam, 1).1.unwrap();
        let far = render_frame(&state_at(dir.map(|v| v * 30.0)), &cam, 1).1.unwrap();
        let px = 1.0 / cam.width as f64;
        assert!((far.w - near.w / 2.0).abs() <= px);
        assert!((far.h - near.h / 2.0).abs() <= px);
    }

    #[test]
    fn rendering_is_seed_deterministic() {
        let cam = CameraConfig::default();
        let s = state_at([60.0, 10.0, 30.0]);
        assert_eq!(render_frame(&s, &cam, 5), render_frame(&s, &cam, 5));
        assert_ne!(render_frame(&s, &cam, 5).0, render_frame(&s, &cam, 6).0);
    }

    #[test]
    fn uav_behind_the_camera_is_not_detected() {
        let (frame, bbox) = render_frame(&state_at([-50.0, 0.0, 5.0]), &CameraConfig::default(), 1);
        assert!(bbox.is_none());
        assert!(frame.in_range());
    }

    #[test]
    fn boxes_are_clipped_inside_the_frame() {
        let cam = CameraConfig::default();
        for y in [-60.0, -40.0, 0.0, 40.0, 60.0] {
            if let (_, Some(b)) = render_frame(&state_at([40.0, y, 10.0]), &cam, 2) {
                assert!(b.is_valid(), "{b:?}");
            }
        }
    }

    #[test]
    fn clean_sample_geometry_is_exact() {
        let p = [30.0, -40.0, 25.0];
        let s = Sample::clean(&state_at(p), Frame::filled(2, 2, 3, 0.0), None, 3);
        assert_eq!(s.gps, [30.0, -40.0]);
        assert_eq!(s.hd, [25.0, 50.0]);
        assert_eq!(s.cues[Modality::Img.index()][2], 0.0);
        assert_eq!(s.cues[Modality::Gps.index()], [0.0, 0.0, 1.0]);
    }

    fn rendered_sample() -> Sample {
        let st = state_at([60.0, 10.0, 30.0]);
        let (frame, bbox) = render_frame(&st, &CameraConfig::default(), 4);
        Sample::clean(&st, frame, bbox, 7)
    }

    #[test]
    fn zero_profile_leaves_the_sample_unchanged() {
        let s = rendered_sample();
        let d = degrade(&s, &DegradationProfile::none(), &mut LabRng::seed_from_u64(1));
        assert_eq!(d.frame, s.frame);
        assert_eq!(d.bbox, s.bbox);
        assert_eq!((d.gps, d.hd, d.posture), (s.gps, s.hd, s.posture));
        assert!(d.cues.iter().all(|c| c[2] == 1.0 && c[1] == 0.0 && c[0] == 0.0));
        assert_eq!(d.label, s.label);
    }

    #[test]
    fn forced_gps_dropout_freezes_the_reading() {
        let mut profile = DegradationProfile::nominal();
        profile.get_mut(Modality::Gps).dropout = 1.0;
        let mut degrader = Degrader::new();
        let mut rng = LabRng::seed_from_u64(2);
        let mut first = None;
        for (t, x) in [50.0, 55.0, 60.0, 65.0].iter().enumerate() {
            let s = Sample::clean(&state_at([*x, 5.0, 20.0]), Frame::filled(2, 2, 3, 0.1), None, 0);
            let d = degrader.apply(&s, &profile, &mut rng);
            let frozen = *first.get_or_insert(d.gps);
            assert_eq!(d.gps, frozen);
            assert_eq!(d.cues[Modality::Gps.index()][1], (t + 1) as f64);
            assert_eq!(d.cues[Modality::Gps.index()][2], 0.0);
            assert_eq!(d.truth[Modality::Gps.index()][2], 1.0);
            // other modalities stay fresh
            assert_eq!(d.cues[Modality::Hd.index()][1], 0.0);
            assert_ne!(d.hd, s.hd);
        }
    }

    #[test]
    fn stale_readings_hold_but_stay_valid() {
        let mut profile = DegradationProfile::none();
        profile.get_mut(Modality::Pos).stale = 1.0;
        let mut degrader = Degrader::new();
        let mut rng = LabRng::seed_from_u64(3);
        let a = degrader.apply(&rendered_sample(), &profile, &mut rng);
        let mut moved = rendered_sample();
        moved.posture = [0.5, 0.5, 0.5];
        let b = degrader.apply(&moved, &profile, &mut rng);
        assert_eq!(b.posture, a.posture);
        assert_eq!(b.cues[Modality::Pos.index()], [0.0, 2.0, 1.0]);
    }

    #[test]
    fn gps_noise_has_the_requested_spread() {
        let mut profile = DegradationProfile::none();
        profile.get_mut(Modality::Gps).noise = 5.0;
        let s = Sample::clean(&state_at([50.0, 0.0, 20.0]), Frame::filled(2, 2, 3, 0.1), None, 0);
        let mut degrader = Degrader::new();
        let mut rng = LabRng::seed_from_u64(4);
        let errs: Vec<f64> = (0..1000)
            .map(|_| degrader.apply(&s, &profile, &mut rng).gps[0] - 50.0)
            .collect();
        let mean = errs.iter().sum::<f64>() / 1000.0;
        let std = (errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / 999.0).sqrt();
        assert!((std - 5.0).abs() < 0.5, "empirical std {std}");
    }

    #[test]
    fn occlusion_masks_part_of_the_frame() {
        let s = rendered_sample();
        let mut profile = DegradationProfile::none();
        profile.get_mut(Modality::Img).occlusion = 0.25;
        let d = degrade(&s, &profile, &mut LabRng::seed_from_u64(5));
        let changed = d.frame.data.iter().zip(&s.frame.data).filter(|(a, b)| a != b).count();
        let area = (s.frame.width * s.frame.height * 3) as f64;
        assert!((changed as f64) > 0.1 * area && (changed as f64) < 0.4 * area);
        assert_eq!(d.truth[Modality::Img.index()][3], 0.25);
        assert!(d.frame.in_range());
    }

    #[test]
    fn degradation_never_touches_label_or_time() {
        let s = rendered_sample();
        let mut profile = DegradationProfile::nominal();
        for m in profile.modalities.iter_mut() {
            *m = ModalityProfile {
                noise: 3.0,
                dropout: 0.5,
                occlusion: 0.3,
                stale: 0.5,
            };
        }
        let mut degrader = Degrader::new();
        let mut rng = LabRng::seed_from_u64(6);
        for _ in 0..20 {
            let d = degrader.apply(&s, &profile, &mut rng);
            assert_eq!((d.label, d.time), (s.label, s.time));
        }
    }

    #[test]
    fn cues_track_injected_noise() {
        let s = rendered_sample();
        let mut degrader = Degrader::new();
        let mut rng = LabRng::seed_from_u64(7);
        let mut pairs = Vec::new();
        for i in 0..400 {
            let mut profile = DegradationProfile::none();
            for m in profile.modalities.iter_mut() {
                m.noise = (i % 20) as f64 * 0.5;
            }
            let d = degrader.apply(&s, &profile, &mut rng);
            for m in Modality::ALL {
                pairs.push((d.truth[m.index()][0], d.cues[m.index()][0]));
            }
        }
        let n = pairs.len() as f64;
        let (mx, my) = (
            pairs.iter().map(|p| p.0).sum::<f64>() / n,
            pairs.iter().map(|p| p.1).sum::<f64>() / n,
        );
        let cov: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let vx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let vy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
        let r = cov / (vx * vy).sqrt();
        assert!(r > 0.8, "pearson {r}");
    }

    #[test]
    fn schedule_picks_by_phase_and_weight() {
        let mut heavy = DegradationProfile::nominal();
        heavy.get_mut(Modality::Gps).noise = 15.0;
        let sched = DegradationSchedule {
            phases: vec![
                SchedulePhase {
                    start: 0.0,
                    choices: vec![(1.0, DegradationProfile::nominal()), (1.0, heavy)],
                },
                SchedulePhase {
                    start: 0.7,
                    choices: vec![(1.0, heavy)],
                },
            ],
        };
        sched.validate().unwrap();
        assert_eq!(*sched.pick(0.1, 0.2), DegradationProfile::nominal());
        assert_eq!(*sched.pick(0.1, 0.7), heavy);
        assert_eq!(*sched.pick(0.8, 0.2), heavy);
        let bad = DegradationSchedule { phases: vec![] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn small_dataset_has_valid_labels_and_is_reproducible() {
        let cfg = small_scenario(10);
        let ds = build_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 10);
        assert!(ds.samples.iter().all(|s| s.label() < 32));
        assert_eq!(ds.split_index(), 7);
        assert_eq!(build_dataset(&cfg).unwrap(), ds);
        assert_eq!(ds.label_histogram().iter().sum::<usize>(), 10);
    }

    #[test]
    fn clean_los_labels_match_an_independent_oracle() {
        let mut cfg = small_scenario(40);
        cfg.channel.nlos_paths = 0;
        cfg.channel.rician_k_db = f64::INFINITY;
        cfg.schedule = DegradationSchedule::constant(DegradationProfile::none());
        let ds = build_dataset(&cfg).unwrap();
        let q = cfg.channel.codebook_size as f64;
        for s in &ds.samples {
            // pure LoS: the best beam is the grid cell that holds the UAV's direction sine
            let p = [s.gps[0], s.gps[1], s.hd[0]];
            let sine = direction_sine(p);
            // boundaries between cells tie; ties resolve to the lower index
            let pos = (sine + 1.0) / 2.0 * q;
            let expected_cell = (pos.ceil() - 1.0).clamp(0.0, q - 1.0) as usize;
            if (pos - pos.round()).abs() < 1e-9 && pos.round() != 0.0 && pos.round() != q {
                assert!(s.label() == expected_cell || s.label() == expected_cell + 1);
                continue;
            }
            assert_eq!(s.label(), expected_cell, "sine {sine} p {p:?}");
        }
    }

    #[test]
    fn paired_profiles_share_everything_but_levels() {
        let base = small_scenario(12);
        let mut heavy = DegradationProfile::nominal();
        heavy.get_mut(Modality::Gps).noise = 12.0;
        let alt = ScenarioConfig {
            schedule: DegradationSchedule::constant(heavy),
            ..base.clone()
        };
        let a = build_dataset(&base).unwrap();
        let b = build_dataset(&alt).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.frame, y.frame);
            assert_eq!((x.hd, x.posture, x.label), (y.hd, y.posture, y.label));
            assert!(y.cues[1][0] > x.cues[1][0]);
            // identical draws: the GPS error scales by exactly 12
            let clean = x.gps[0] - (x.gps[0] - y.gps[0]) * (1.0 / (1.0 - 12.0));
            let ex = x.gps[0] - clean;
            let ey = y.gps[0] - clean;
            assert!((ey - 12.0 * ex).abs() < 1e-6);
        }
    }
}
