//! Binary dataset and checkpoint files.
//!
//! Both are little-endian and CRC32-protected. A dataset file is
//!
//! ```text
//! "S2MB" | u32 version | u32 len, scenario config text | u64 count | u64 seed | u32 crc
//! count × record
//! ```
//!
//! where the CRC covers every header byte before it plus all records, and a
//! record is
//!
//! ```text
//! f32 × (W·H·3) frame | u8 has_bbox | f64 × 4 bbox | f64 × 2 gps | f64 × 2 hd
//! f64 × 3 posture | f64 × 12 cues | f64 × 16 degradation truth | u16 label | f64 time
//! ```
//!
//! A checkpoint is `"S2CK" | u32 version | variant | train config | u64 classes
//! | tensors | stats | u32 crc`, with the CRC over everything before it.

use std::path::Path;

use sam2b_core::autodiff::Tensor;
use sam2b_core::encoders::{NormStats, Standardizer};
use sam2b_core::model::{Model, Variant};
use sam2b_core::trainer::TrainConfig;
use sam2b_core::sensors::{BBox, CameraConfig, Dataset, Frame, Sample, CUE_ARITY, TRUTH_ARITY};
use toml::{Table, Value};

use crate::config::{scenario_from_text, scenario_to_text, train_from_text, train_to_text};
use crate::error::{LabError, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"S2MB";
pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"S2CK";
pub const CHECKPOINT_VERSION: u32 = 1;

const VECTOR_FLOATS: usize = 4 + 2 + 2 + 3 + 4 * CUE_ARITY + 4 * TRUTH_ARITY;

/// Bytes per sample record for a given camera.
pub fn record_bytes(camera: &CameraConfig) -> usize {
    4 * camera.width * camera.height * CameraConfig::CHANNELS + 1 + 8 * VECTOR_FLOATS + 2 + 8
}

#[derive(Default)]
struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

/// Reads from a byte slice; running out of bytes yields `short()`.
struct In<'a> {
    bytes: &'a [u8],
    pos: usize,
    short: fn() -> LabError,
}

impl<'a> In<'a> {
    fn new(bytes: &'a [u8], short: fn() -> LabError) -> Self {
        In { bytes, pos: 0, short }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(self.short)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn f64s<const N: usize>(&mut self) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for v in out.iter_mut() {
            *v = self.f64()?;
        }
        Ok(out)
    }
    fn vec_f64(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| LabError::Malformed("text block is not UTF-8".into()))
    }
    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

fn malformed(what: &str) -> LabError {
    LabError::Malformed(what.into())
}

fn write_record(out: &mut Out, s: &Sample) {
    s.frame.data.iter().for_each(|&v| out.f32(v));
    match &s.bbox {
        Some(b) => {
            out.u8(1);
            out.f64s(&b.to_array());
        }
        None => {
            out.u8(0);
            out.f64s(&[0.0; 4]);
        }
    }
    out.f64s(&s.gps);
    out.f64s(&s.hd);
    out.f64s(&s.posture);
    s.cues.iter().for_each(|c| out.f64s(c));
    s.truth.iter().for_each(|t| out.f64s(t));
    out.u16(s.label);
    out.f64(s.time);
}

fn read_record(r: &mut In, camera: &CameraConfig) -> Result<Sample> {
    let (w, h, c) = (camera.width, camera.height, CameraConfig::CHANNELS);
    let data = (0..w * h * c).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    let has_bbox = r.u8()?;
    let [x_c, y_c, bw, bh] = r.f64s::<4>()?;
    let bbox = match has_bbox {
        0 => None,
        1 => Some(BBox { x_c, y_c, w: bw, h: bh }),
        _ => return Err(malformed("bbox flag must be 0 or 1")),
    };
    let gps = r.f64s()?;
    let hd = r.f64s()?;
    let posture = r.f64s()?;
    let mut cues = [[0.0; CUE_ARITY]; 4];
    for c in cues.iter_mut() {
        *c = r.f64s()?;
    }
    let mut truth = [[0.0; TRUTH_ARITY]; 4];
    for t in truth.iter_mut() {
        *t = r.f64s()?;
    }
    Ok(Sample {
        frame: Frame {
            width: w,
            height: h,
            channels: c,
            data,
        },
        bbox,
        gps,
        hd,
        posture,
        cues,
        truth,
        label: r.u16()?,
        time: r.f64()?,
    })
}

/// Serializes a dataset; returns the bytes and their CRC.
pub fn encode_dataset(ds: &Dataset) -> Result<(Vec<u8>, u32)> {
    let cam = &ds.config.camera;
    let pixels = cam.width * cam.height * CameraConfig::CHANNELS;
    if let Some(s) = ds.samples.iter().find(|s| s.frame.data.len() != pixels) {
        return Err(LabError::Malformed(format!(
            "sample at t={} has {} frame values, the camera config implies {pixels}",
            s.time,
            s.frame.data.len()
        )));
    }
    let mut head = Out::default();
    head.0.extend_from_slice(DATASET_MAGIC);
    head.u32(DATASET_VERSION);
    head.str(&scenario_to_text(&ds.config));
    head.u64(ds.samples.len() as u64);
    head.u64(ds.config.seed);
    let mut body = Out::default();
    body.0.reserve(ds.samples.len() * record_bytes(cam));
    ds.samples.iter().for_each(|s| write_record(&mut body, s));
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&head.0);
    hasher.update(&body.0);
    let crc = hasher.finalize();
    head.u32(crc);
    head.0.extend_from_slice(&body.0);
    Ok((head.0, crc))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = In::new(bytes, || LabError::Truncated);
    if &r.array::<4>()? != DATASET_MAGIC {
        return Err(LabError::BadMagic { expected: "dataset" });
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(LabError::Version {
            found: version,
            supported: DATASET_VERSION,
        });
    }
    let text = r.str()?;
    let count = r.u64()?;
    let seed = r.u64()?;
    let covered = r.pos;
    let stored = r.u32()?;
    let body = r.rest();
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&bytes[..covered]);
    hasher.update(body);
    let computed = hasher.finalize();
    if computed != stored {
        return Err(LabError::Checksum { stored, computed });
    }
    let config = scenario_from_text(&text)?;
    if config.seed != seed {
        return Err(malformed("header seed differs from the embedded config"));
    }
    let stride = record_bytes(&config.camera);
    let expected = (count as usize).checked_mul(stride).ok_or_else(|| malformed("sample count overflows"))?;
    if body.len() != expected {
        return Err(LabError::Malformed(format!(
            "{count} records need {expected} bytes, found {}",
            body.len()
        )));
    }
    let mut r = In::new(body, || malformed("record overrun"));
    let samples = (0..count)
        .map(|_| read_record(&mut r, &config.camera))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { config, samples })
}

/// Human-readable companion to a dataset file.
pub fn manifest_text(ds: &Dataset, crc: u32) -> String {
    let cam = &ds.config.camera;
    let mut m = Table::new();
    m.insert("format_version".into(), Value::Integer(DATASET_VERSION as i64));
    m.insert("samples".into(), Value::Integer(ds.len() as i64));
    m.insert("seed".into(), Value::Integer(ds.config.seed as i64));
    m.insert("split_index".into(), Value::Integer(ds.split_index() as i64));
    m.insert("codebook_size".into(), Value::Integer(ds.codebook_size() as i64));
    m.insert(
        "frame".into(),
        Value::Array(
            [cam.width, cam.height, CameraConfig::CHANNELS]
                .iter()
                .map(|&v| Value::Integer(v as i64))
                .collect(),
        ),
    );
    m.insert("record_bytes".into(), Value::Integer(record_bytes(cam) as i64));
    m.insert("checksum".into(), Value::String(format!("{crc:08x}")));
    m.insert(
        "bbox_present".into(),
        Value::Integer(ds.samples.iter().filter(|s| s.bbox.is_some()).count() as i64),
    );
    m.insert(
        "label_histogram".into(),
        Value::Array(ds.label_histogram().into_iter().map(|c| Value::Integer(c as i64)).collect()),
    );
    let mut root = Table::new();
    root.insert("manifest".into(), Value::Table(m));
    toml::to_string(&root).expect("manifest serializes") + "\n" + &scenario_to_text(&ds.config)
}

pub fn manifest_path(dataset: &Path) -> std::path::PathBuf {
    let mut name = dataset.as_os_str().to_os_string();
    name.push(".manifest.toml");
    name.into()
}

/// Writes the dataset and its manifest next to it.
pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<u32> {
    let (bytes, crc) = encode_dataset(ds)?;
    std::fs::write(path, bytes).map_err(|e| LabError::io(path, e))?;
    let manifest = manifest_path(path);
    std::fs::write(&manifest, manifest_text(ds, crc)).map_err(|e| LabError::io(&manifest, e))?;
    Ok(crc)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode_dataset(&bytes)
}

fn stats_fields(s: &NormStats) -> [&Standardizer; 7] {
    [&s.gps, &s.hd, &s.posture, &s.bbox, &s.frame_mean, &s.roi, &s.cues]
}

pub fn encode_checkpoint(model: &Model, train_config_text: &str) -> Vec<u8> {
    let mut out = Out::default();
    out.0.extend_from_slice(CHECKPOINT_MAGIC);
    out.u32(CHECKPOINT_VERSION);
    out.str(&model.variant.name());
    out.str(train_config_text);
    out.u64(model.classes as u64);
    out.u32(model.store.len() as u32);
    for (name, t) in model.store.names().iter().zip(model.store.tensors()) {
        out.str(name);
        out.u32(t.shape().len() as u32);
        t.shape().iter().for_each(|&d| out.u64(d as u64));
        out.f64s(t.data());
    }
    match &model.stats {
        None => out.u8(0),
        Some(stats) => {
            out.u8(1);
            for s in stats_fields(stats) {
                out.u32(s.mean.len() as u32);
                out.f64s(&s.mean);
                out.f64s(&s.std);
            }
        }
    }
    let crc = crc32fast::hash(&out.0);
    out.u32(crc);
    out.0
}

/// A trained model with the configuration it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
}

/// Rebuilds a model; `expected` rejects checkpoints of another variant.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<Variant>) -> Result<Checkpoint> {
    let mut r = In::new(bytes, || LabError::Truncated);
    if &r.array::<4>()? != CHECKPOINT_MAGIC {
        return Err(LabError::BadMagic { expected: "checkpoint" });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(LabError::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < r.pos + 4 {
        return Err(LabError::Truncated);
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(LabError::Checksum { stored, computed });
    }
    let mut r = In::new(&payload[r.pos..], || malformed("checkpoint body overrun"));
    let variant: Variant = r.str()?.parse()?;
    if let Some(want) = expected {
        if want != variant {
            return Err(LabError::VariantMismatch {
                found: variant.name(),
                expected: want.name(),
            });
        }
    }
    let cfg = train_from_text(&r.str()?)?;
    if cfg.variant != variant {
        return Err(malformed("embedded config names a different variant"));
    }
    let classes = r.u64()? as usize;
    let mut model = Model::new(&cfg.model, variant, classes, cfg.seed)?;
    let count = r.u32()? as usize;
    if count != model.store.len() {
        return Err(LabError::Malformed(format!(
            "checkpoint has {count} tensors, the model has {}",
            model.store.len()
        )));
    }
    let names = model.store.names().to_vec();
    for (i, want) in names.iter().enumerate() {
        let name = r.str()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let slot = &mut model.store.tensors_mut()[i];
        if &name != want || shape != slot.shape() {
            return Err(LabError::Malformed(format!(
                "tensor {i} is {name} {shape:?}, expected {want} {:?}",
                slot.shape()
            )));
        }
        let len = shape.iter().product();
        *slot = Tensor::new(shape, r.vec_f64(len)?)?;
    }
    model.stats = match r.u8()? {
        0 => None,
        1 => {
            let mut next = || -> Result<Standardizer> {
                let n = r.u32()? as usize;
                Ok(Standardizer {
                    mean: r.vec_f64(n)?,
                    std: r.vec_f64(n)?,
                })
            };
            Some(NormStats {
                gps: next()?,
                hd: next()?,
                posture: next()?,
                bbox: next()?,
                frame_mean: next()?,
                roi: next()?,
                cues: next()?,
            })
        }
        _ => return Err(malformed("stats flag must be 0 or 1")),
    };
    if !r.rest().is_empty() {
        return Err(malformed("trailing bytes after the checkpoint body"));
    }
    Ok(Checkpoint { model, train: cfg })
}

pub fn save_checkpoint(path: &Path, model: &Model, train: &TrainConfig) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, &train_to_text(train))).map_err(|e| LabError::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected: Option<Variant>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode_checkpoint(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sam2b_core::sensors::{build_dataset, ScenarioConfig};

    fn tiny() -> Dataset {
        let mut cfg = ScenarioConfig::default();
        cfg.trajectory.duration = 6.0;
        cfg.camera.width = 6;
        cfg.camera.height = 5;
        cfg.seed = 3;
        build_dataset(&cfg).unwrap()
    }

    #[test]
    fn dataset_round_trips_exactly() {
        let ds = tiny();
        let (bytes, crc) = encode_dataset(&ds).unwrap();
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
        let header = bytes.len() - ds.len() * record_bytes(&ds.config.camera);
        assert_eq!(u32::from_le_bytes(bytes[header - 4..header].try_into().unwrap()), crc);
    }

    #[test]
    fn corruption_cases_have_distinct_errors() {
        let (bytes, _) = encode_dataset(&tiny()).unwrap();
        let mut flipped = bytes.clone();
        let last = flipped.len() - 3;
        flipped[last] ^= 0x40;
        assert!(matches!(decode_dataset(&flipped), Err(LabError::Checksum { .. })));
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 1]), Err(LabError::Checksum { .. })));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode_dataset(&longer), Err(LabError::Checksum { .. })));
        assert!(matches!(decode_dataset(&bytes[..10]), Err(LabError::Truncated)));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_dataset(&v2), Err(LabError::Version { found: 2, supported: 1 })));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(decode_dataset(&magic), Err(LabError::BadMagic { .. })));
    }

    #[test]
    fn manifest_lists_counts_and_config() {
        let ds = tiny();
        let (_, crc) = encode_dataset(&ds).unwrap();
        let text = manifest_text(&ds, crc);
        let t: Table = text.parse().unwrap();
        let m = t["manifest"].as_table().unwrap();
        assert_eq!(m["samples"].as_integer(), Some(12));
        assert_eq!(m["checksum"].as_str(), Some(format!("{crc:08x}").as_str()));
        assert_eq!(scenario_from_text(&text.split_once("\n\n").unwrap().1).unwrap(), ds.config);
    }
}
