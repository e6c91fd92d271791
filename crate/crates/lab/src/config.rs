//! Experiment configuration as TOML key-value text.
//!
//! Every key is optional and falls back to the library default. Unknown keys
//! are an error so that a typo never silently turns into a default. Writing a
//! config back out always produces every key, which is what gets stored next
//! to run outputs and inside dataset files.

use std::path::{Path, PathBuf};

use sam2b_core::channel::{ChannelConfig, TrajectoryConfig};
use sam2b_core::fusion::AlphaMode;
use sam2b_core::model::Variant;
use sam2b_core::sensors::{
    CameraConfig, DegradationProfile, DegradationSchedule, Modality, ModalityProfile, ScenarioConfig, SchedulePhase,
};
use sam2b_core::trainer::{LrSchedule, TrainConfig};
use toml::{Table, Value};

use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    /// Variants trained by `ablate`.
    pub variants: Vec<Variant>,
    /// Where outputs go when the command line names no `--out`.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            train: TrainConfig::default(),
            variants: Variant::ALL.to_vec(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut root: Table = text.parse().map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        let mut cfg = ExperimentConfig::default();
        let mut r = Reader::new(&mut root, "");
        if let Some(f) = r.f64("split_fraction")? {
            cfg.scenario.split_fraction = f;
            cfg.train.split_fraction = f;
        }
        if let Some(list) = r.take("variants") {
            cfg.variants = parse_variants(&list)?;
        }
        cfg.out_dir = r.str("out_dir")?.map(PathBuf::from);
        if let Some(mut t) = r.table("scenario")? {
            read_scenario(&mut Reader::new(&mut t, "scenario"), &mut cfg.scenario)?;
        }
        if let Some(mut t) = r.table("train")? {
            read_train(&mut Reader::new(&mut t, "train"), &mut cfg.train)?;
        }
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate().map_err(config_error)?;
        self.train.validate().map_err(config_error)?;
        if self.variants.is_empty() {
            return Err(LabError::Config("variants must list at least one variant".into()));
        }
        Ok(())
    }

    /// Fully resolved text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut root = Table::new();
        root.insert("split_fraction".into(), Value::Float(self.train.split_fraction));
        root.insert(
            "variants".into(),
            Value::Array(self.variants.iter().map(|v| Value::String(v.name())).collect()),
        );
        if let Some(dir) = &self.out_dir {
            root.insert("out_dir".into(), Value::String(dir.to_string_lossy().into_owned()));
        }
        root.insert("scenario".into(), Value::Table(scenario_table(&self.scenario)));
        root.insert("train".into(), Value::Table(train_table(&self.train)));
        toml::to_string(&root).expect("config tables always serialize")
    }
}

/// Scenario-only text, as embedded in dataset files.
pub fn scenario_to_text(s: &ScenarioConfig) -> String {
    let mut root = Table::new();
    root.insert("scenario".into(), Value::Table(scenario_table(s)));
    toml::to_string(&root).expect("config tables always serialize")
}

pub fn scenario_from_text(text: &str) -> Result<ScenarioConfig> {
    let mut root: Table = text.parse().map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
    let mut cfg = ScenarioConfig::default();
    let mut r = Reader::new(&mut root, "");
    if let Some(mut t) = r.table("scenario")? {
        read_scenario(&mut Reader::new(&mut t, "scenario"), &mut cfg)?;
    }
    r.finish()?;
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

/// Training-only text, as embedded in checkpoints.
pub fn train_to_text(t: &TrainConfig) -> String {
    let mut root = Table::new();
    root.insert("split_fraction".into(), Value::Float(t.split_fraction));
    root.insert("train".into(), Value::Table(train_table(t)));
    toml::to_string(&root).expect("config tables always serialize")
}

pub fn train_from_text(text: &str) -> Result<TrainConfig> {
    Ok(ExperimentConfig::parse(text)?.train)
}

/// Core config complaints become lab config errors.
fn config_error(e: sam2b_core::Error) -> LabError {
    match e {
        sam2b_core::Error::Config(msg) => LabError::Config(msg),
        other => LabError::Core(other),
    }
}

fn parse_variants(v: &Value) -> Result<Vec<Variant>> {
    let items = v
        .as_array()
        .ok_or_else(|| LabError::Config("variants must be a list of names".into()))?;
    items
        .iter()
        .map(|i| {
            i.as_str()
                .ok_or_else(|| LabError::Config("variants must be a list of names".into()))?
                .parse::<Variant>()
                .map_err(config_error)
        })
        .collect()
}

/// Consumes keys from one table; whatever is left over is unknown.
struct Reader<'a> {
    table: &'a mut Table,
    prefix: String,
}

impl<'a> Reader<'a> {
    fn new(table: &'a mut Table, prefix: &str) -> Self {
        Reader {
            table,
            prefix: prefix.to_string(),
        }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn bad(&self, key: &str, want: &str) -> LabError {
        LabError::Config(format!("`{}` must be {want}", self.path(key)))
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.table.remove(key)
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(f)),
            Some(Value::Integer(i)) => Ok(Some(i as f64)),
            Some(_) => Err(self.bad(key, "a number")),
        }
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if i >= 0 => Ok(Some(i as u64)),
            Some(_) => Err(self.bad(key, "a non-negative integer")),
        }
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(b)),
            Some(_) => Err(self.bad(key, "true or false")),
        }
    }

    fn str(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.bad(key, "a string")),
        }
    }

    fn point(&mut self, key: &str) -> Result<Option<[f64; 3]>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => point(&v).map(Some).ok_or_else(|| self.bad(key, "a list of 3 numbers")),
        }
    }

    fn table(&mut self, key: &str) -> Result<Option<Table>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(t)),
            Some(_) => Err(self.bad(key, "a table")),
        }
    }

    fn finish(&self) -> Result<()> {
        match self.table.keys().next() {
            None => Ok(()),
            Some(k) => Err(LabError::Config(format!("unknown key `{}`", self.path(k)))),
        }
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn point(v: &Value) -> Option<[f64; 3]> {
    let a = v.as_array()?;
    if a.len() != 3 {
        return None;
    }
    Some([number(&a[0])?, number(&a[1])?, number(&a[2])?])
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn read_scenario(r: &mut Reader, s: &mut ScenarioConfig) -> Result<()> {
    set(&mut s.seed, r.u64("seed")?);
    if let Some(f) = r.f64("split_fraction")? {
        s.split_fraction = f;
    }
    if let Some(mut t) = r.table("trajectory")? {
        let mut r = Reader::new(&mut t, &r.path("trajectory"));
        read_trajectory(&mut r, &mut s.trajectory)?;
        r.finish()?;
    }
    if let Some(mut t) = r.table("channel")? {
        let mut r = Reader::new(&mut t, &r.path("channel"));
        read_channel(&mut r, &mut s.channel)?;
        r.finish()?;
    }
    if let Some(mut t) = r.table("camera")? {
        let mut r = Reader::new(&mut t, &r.path("camera"));
        read_camera(&mut r, &mut s.camera)?;
        r.finish()?;
    }
    if let Some(v) = r.take("degradation") {
        s.schedule = read_schedule(&v)?;
    }
    r.finish()
}

fn read_trajectory(r: &mut Reader, t: &mut TrajectoryConfig) -> Result<()> {
    set(&mut t.duration, r.f64("duration")?);
    set(&mut t.step, r.f64("step")?);
    set(&mut t.speed, r.f64("speed")?);
    set(&mut t.max_turn_rate, r.f64("max_turn_rate")?);
    set(&mut t.max_climb_rate, r.f64("max_climb_rate")?);
    set(&mut t.region_min, r.point("region_min")?);
    set(&mut t.region_max, r.point("region_max")?);
    if let Some(p) = r.point("start")? {
        t.start = Some(p);
    }
    if let Some(v) = r.take("waypoints") {
        let bad = || LabError::Config(format!("`{}` must be a list of [x, y, z] points", r.path("waypoints")));
        t.waypoints = v
            .as_array()
            .ok_or_else(bad)?
            .iter()
            .map(|p| point(p).ok_or_else(bad))
            .collect::<Result<_>>()?;
    }
    set(&mut t.waypoint_radius, r.f64("waypoint_radius")?);
    set(&mut t.posture_jitter, r.f64("posture_jitter")?);
    Ok(())
}

fn read_channel(r: &mut Reader, c: &mut ChannelConfig) -> Result<()> {
    set(&mut c.antennas, r.usize("antennas")?);
    set(&mut c.subcarriers, r.usize("subcarriers")?);
    set(&mut c.codebook_size, r.usize("codebook_size")?);
    set(&mut c.cyclic_prefix, r.usize("cyclic_prefix")?);
    set(&mut c.antenna_spacing, r.f64("antenna_spacing")?);
    set(&mut c.tx_power, r.f64("tx_power")?);
    set(&mut c.noise_power, r.f64("noise_power")?);
    set(&mut c.nlos_paths, r.usize("nlos_paths")?);
    set(&mut c.rician_k_db, r.f64("rician_k_db")?);
    set(&mut c.delay_spread, r.f64("delay_spread")?);
    set(&mut c.carrier_hz, r.f64("carrier_hz")?);
    set(&mut c.subcarrier_spacing_hz, r.f64("subcarrier_spacing_hz")?);
    Ok(())
}

fn read_camera(r: &mut Reader, c: &mut CameraConfig) -> Result<()> {
    set(&mut c.width, r.usize("width")?);
    set(&mut c.height, r.usize("height")?);
    set(&mut c.hfov, r.f64("hfov")?);
    set(&mut c.tilt, r.f64("tilt")?);
    set(&mut c.uav_radius, r.f64("uav_radius")?);
    set(&mut c.clutter_objects, r.usize("clutter_objects")?);
    set(&mut c.clutter_level, r.f64("clutter_level")?);
    Ok(())
}

/// `[[scenario.degradation]]` phases, each with `[[...choice]]` entries.
/// Modalities left out of a choice keep nominal sensor noise.
fn read_schedule(v: &Value) -> Result<DegradationSchedule> {
    let bad = |what: &str| LabError::Config(format!("`scenario.degradation` {what}"));
    let phases = v.as_array().ok_or_else(|| bad("must be an array of phase tables"))?;
    let mut out = Vec::new();
    for (i, phase) in phases.iter().enumerate() {
        let mut t = phase.as_table().ok_or_else(|| bad("must be an array of phase tables"))?.clone();
        let mut r = Reader::new(&mut t, &format!("scenario.degradation.{i}"));
        let start = r.f64("start")?.unwrap_or(0.0);
        let choices = r.take("choice").ok_or_else(|| bad("phases need at least one `choice`"))?;
        let choices = choices.as_array().ok_or_else(|| bad("`choice` must be an array of tables"))?;
        let mut parsed = Vec::new();
        for (j, c) in choices.iter().enumerate() {
            let mut ct = c.as_table().ok_or_else(|| bad("`choice` must be an array of tables"))?.clone();
            let mut cr = Reader::new(&mut ct, &format!("scenario.degradation.{i}.choice.{j}"));
            let weight = cr.f64("weight")?.unwrap_or(1.0);
            let mut profile = DegradationProfile::nominal();
            for m in Modality::ALL {
                if let Some(mut mt) = cr.table(m.name())? {
                    let mut mr = Reader::new(&mut mt, &cr.path(m.name()));
                    read_modality(&mut mr, profile.get_mut(m))?;
                    mr.finish()?;
                }
            }
            cr.finish()?;
            parsed.push((weight, profile));
        }
        r.finish()?;
        out.push(SchedulePhase { start, choices: parsed });
    }
    Ok(DegradationSchedule { phases: out })
}

fn read_modality(r: &mut Reader, p: &mut ModalityProfile) -> Result<()> {
    set(&mut p.noise, r.f64("noise")?);
    set(&mut p.dropout, r.f64("dropout")?);
    set(&mut p.occlusion, r.f64("occlusion")?);
    set(&mut p.stale, r.f64("stale")?);
    Ok(())
}

fn read_train(r: &mut Reader, t: &mut TrainConfig) -> Result<()> {
    set(&mut t.epochs, r.usize("epochs")?);
    set(&mut t.batch_size, r.usize("batch_size")?);
    set(&mut t.learning_rate, r.f64("learning_rate")?);
    match r.str("lr_schedule")?.as_deref() {
        None => {}
        Some("constant") => t.lr_schedule = LrSchedule::Constant,
        Some("cosine") => t.lr_schedule = LrSchedule::Cosine,
        Some(other) => {
            return Err(LabError::Config(format!(
                "`train.lr_schedule` must be \"constant\" or \"cosine\", got \"{other}\""
            )))
        }
    }
    set(&mut t.beta1, r.f64("beta1")?);
    set(&mut t.beta2, r.f64("beta2")?);
    set(&mut t.adam_eps, r.f64("adam_eps")?);
    set(&mut t.seed, r.u64("seed")?);
    set(&mut t.loss.beta, r.f64("beta")?);
    set(&mut t.loss.theta, r.f64("theta")?);
    if let Some(v) = r.str("variant")? {
        t.variant = v.parse().map_err(config_error)?;
    }
    let mode = r.str("alpha_mode")?;
    let alpha = r.f64("alpha")?;
    let current = match t.model.fusion.alpha {
        AlphaMode::Learnable(a) | AlphaMode::Fixed(a) => a,
    };
    let a = alpha.unwrap_or(current);
    t.model.fusion.alpha = match mode.as_deref() {
        None => match t.model.fusion.alpha {
            AlphaMode::Learnable(_) => AlphaMode::Learnable(a),
            AlphaMode::Fixed(_) => AlphaMode::Fixed(a),
        },
        Some("learnable") => AlphaMode::Learnable(a),
        Some("fixed") => AlphaMode::Fixed(a),
        Some(other) => {
            return Err(LabError::Config(format!(
                "`train.alpha_mode` must be \"learnable\" or \"fixed\", got \"{other}\""
            )))
        }
    };
    if let Some(mut mt) = r.table("model")? {
        let mut r = Reader::new(&mut mt, &r.path("model"));
        let e = &mut t.model.encoder;
        set(&mut e.embed_dim, r.usize("embed_dim")?);
        set(&mut e.roi_size, r.usize("roi_size")?);
        set(&mut e.conv1_filters, r.usize("conv1_filters")?);
        set(&mut e.conv2_filters, r.usize("conv2_filters")?);
        set(&mut e.image_hidden, r.usize("image_hidden")?);
        set(&mut e.vector_hidden, r.usize("vector_hidden")?);
        let f = &mut t.model.fusion;
        set(&mut f.heads, r.usize("heads")?);
        set(&mut f.residual, r.bool("residual")?);
        set(&mut f.score_hidden, r.usize("score_hidden")?);
        set(&mut f.cue_hidden, r.usize("cue_hidden")?);
        set(&mut f.shared_reliability, r.bool("shared_reliability")?);
        r.finish()?;
    }
    r.finish()
}

fn float_list(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| Value::Float(x)).collect())
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

fn seed(v: u64) -> Value {
    Value::Integer(v as i64)
}

fn scenario_table(s: &ScenarioConfig) -> Table {
    let mut out = Table::new();
    out.insert("seed".into(), seed(s.seed));
    out.insert("split_fraction".into(), Value::Float(s.split_fraction));

    let t = &s.trajectory;
    let mut tt = Table::new();
    tt.insert("duration".into(), Value::Float(t.duration));
    tt.insert("step".into(), Value::Float(t.step));
    tt.insert("speed".into(), Value::Float(t.speed));
    tt.insert("max_turn_rate".into(), Value::Float(t.max_turn_rate));
    tt.insert("max_climb_rate".into(), Value::Float(t.max_climb_rate));
    tt.insert("region_min".into(), float_list(&t.region_min));
    tt.insert("region_max".into(), float_list(&t.region_max));
    if let Some(p) = t.start {
        tt.insert("start".into(), float_list(&p));
    }
    tt.insert(
        "waypoints".into(),
        Value::Array(t.waypoints.iter().map(|p| float_list(p)).collect()),
    );
    tt.insert("waypoint_radius".into(), Value::Float(t.waypoint_radius));
    tt.insert("posture_jitter".into(), Value::Float(t.posture_jitter));
    out.insert("trajectory".into(), Value::Table(tt));

    let c = &s.channel;
    let mut ct = Table::new();
    ct.insert("antennas".into(), int(c.antennas));
    ct.insert("subcarriers".into(), int(c.subcarriers));
    ct.insert("codebook_size".into(), int(c.codebook_size));
    ct.insert("cyclic_prefix".into(), int(c.cyclic_prefix));
    ct.insert("antenna_spacing".into(), Value::Float(c.antenna_spacing));
    ct.insert("tx_power".into(), Value::Float(c.tx_power));
    ct.insert("noise_power".into(), Value::Float(c.noise_power));
    ct.insert("nlos_paths".into(), int(c.nlos_paths));
    ct.insert("rician_k_db".into(), Value::Float(c.rician_k_db));
    ct.insert("delay_spread".into(), Value::Float(c.delay_spread));
    ct.insert("carrier_hz".into(), Value::Float(c.carrier_hz));
    ct.insert("subcarrier_spacing_hz".into(), Value::Float(c.subcarrier_spacing_hz));
    out.insert("channel".into(), Value::Table(ct));

    let cam = &s.camera;
    let mut mt = Table::new();
    mt.insert("width".into(), int(cam.width));
    mt.insert("height".into(), int(cam.height));
    mt.insert("hfov".into(), Value::Float(cam.hfov));
    mt.insert("tilt".into(), Value::Float(cam.tilt));
    mt.insert("uav_radius".into(), Value::Float(cam.uav_radius));
    mt.insert("clutter_objects".into(), int(cam.clutter_objects));
    mt.insert("clutter_level".into(), Value::Float(cam.clutter_level));
    out.insert("camera".into(), Value::Table(mt));

    let phases = s
        .schedule
        .phases
        .iter()
        .map(|p| {
            let mut pt = Table::new();
            pt.insert("start".into(), Value::Float(p.start));
            let choices = p
                .choices
                .iter()
                .map(|(w, profile)| {
                    let mut c = Table::new();
                    c.insert("weight".into(), Value::Float(*w));
                    for m in Modality::ALL {
                        let mp = profile.get(m);
                        let mut t = Table::new();
                        t.insert("noise".into(), Value::Float(mp.noise));
                        t.insert("dropout".into(), Value::Float(mp.dropout));
                        t.insert("occlusion".into(), Value::Float(mp.occlusion));
                        t.insert("stale".into(), Value::Float(mp.stale));
                        c.insert(m.name().into(), Value::Table(t));
                    }
                    Value::Table(c)
                })
                .collect();
            pt.insert("choice".into(), Value::Array(choices));
            Value::Table(pt)
        })
        .collect();
    out.insert("degradation".into(), Value::Array(phases));
    out
}

fn train_table(t: &TrainConfig) -> Table {
    let mut out = Table::new();
    out.insert("epochs".into(), int(t.epochs));
    out.insert("batch_size".into(), int(t.batch_size));
    out.insert("learning_rate".into(), Value::Float(t.learning_rate));
    let schedule = match t.lr_schedule {
        LrSchedule::Constant => "constant",
        LrSchedule::Cosine => "cosine",
    };
    out.insert("lr_schedule".into(), Value::String(schedule.into()));
    out.insert("beta1".into(), Value::Float(t.beta1));
    out.insert("beta2".into(), Value::Float(t.beta2));
    out.insert("adam_eps".into(), Value::Float(t.adam_eps));
    out.insert("seed".into(), seed(t.seed));
    out.insert("beta".into(), Value::Float(t.loss.beta));
    out.insert("theta".into(), Value::Float(t.loss.theta));
    out.insert("variant".into(), Value::String(t.variant.name()));
    let (mode, a) = match t.model.fusion.alpha {
        AlphaMode::Learnable(a) => ("learnable", a),
        AlphaMode::Fixed(a) => ("fixed", a),
    };
    out.insert("alpha_mode".into(), Value::String(mode.into()));
    out.insert("alpha".into(), Value::Float(a));
    let e = &t.model.encoder;
    let f = &t.model.fusion;
    let mut m = Table::new();
    m.insert("embed_dim".into(), int(e.embed_dim));
    m.insert("roi_size".into(), int(e.roi_size));
    m.insert("conv1_filters".into(), int(e.conv1_filters));
    m.insert("conv2_filters".into(), int(e.conv2_filters));
    m.insert("image_hidden".into(), int(e.image_hidden));
    m.insert("vector_hidden".into(), int(e.vector_hidden));
    m.insert("heads".into(), int(f.heads));
    m.insert("residual".into(), Value::Boolean(f.residual));
    m.insert("score_hidden".into(), int(f.score_hidden));
    m.insert("cue_hidden".into(), int(f.cue_hidden));
    m.insert("shared_reliability".into(), Value::Boolean(f.shared_reliability));
    out.insert("model".into(), Value::Table(m));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.seed = 17;
        cfg.scenario.channel.rician_k_db = f64::INFINITY;
        cfg.scenario.trajectory.start = Some([50.0, -3.25, 20.0]);
        cfg.scenario.trajectory.waypoints = vec![[60.0, 0.0, 30.0], [100.0, 20.0, 40.0]];
        let mut heavy = DegradationProfile::nominal();
        heavy.get_mut(Modality::Gps).noise = 12.0;
        heavy.get_mut(Modality::Img).occlusion = 0.3;
        cfg.scenario.schedule = DegradationSchedule {
            phases: vec![
                SchedulePhase {
                    start: 0.0,
                    choices: vec![(0.8, DegradationProfile::nominal()), (0.2, heavy)],
                },
                SchedulePhase {
                    start: 0.7,
                    choices: vec![(1.0, heavy)],
                },
            ],
        };
        cfg.train.learning_rate = 0.1 + 0.2;
        cfg.train.lr_schedule = LrSchedule::Constant;
        cfg.train.model.fusion.alpha = AlphaMode::Fixed(0.25);
        cfg.variants = vec![Variant::Sam2b, Variant::Single(Modality::Pos)];
        cfg.out_dir = Some("runs/a b".into());
        let text = cfg.to_text();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_text_overrides_only_named_keys() {
        let cfg = ExperimentConfig::parse(
            "split_fraction = 0.6\nvariants = [\"sam2b\", \"geometry_only\"]\n\
             [scenario.channel]\nnlos_paths = 0\n\
             [train]\nepochs = 3\nvariant = \"single_gps\"\n[train.model]\nembed_dim = 16\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario.channel.nlos_paths, 0);
        assert_eq!(cfg.scenario.channel.antennas, 16);
        assert_eq!((cfg.scenario.split_fraction, cfg.train.split_fraction), (0.6, 0.6));
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.variant, Variant::Single(Modality::Gps));
        assert_eq!(cfg.train.model.encoder.embed_dim, 16);
        assert_eq!(cfg.variants, vec![Variant::Sam2b, Variant::GeometryOnly]);
    }

    #[test]
    fn lr_schedule_names() {
        let cfg = ExperimentConfig::parse("[train]\nlr_schedule = \"constant\"\n").unwrap();
        assert_eq!(cfg.train.lr_schedule, LrSchedule::Constant);
        assert_eq!(ExperimentConfig::default().train.lr_schedule, LrSchedule::Cosine);
        let err = ExperimentConfig::parse("[train]\nlr_schedule = \"step\"\n").unwrap_err();
        assert!(err.to_string().contains("train.lr_schedule"), "{err}");
    }

    #[test]
    fn omitted_modalities_in_a_choice_stay_nominal() {
        let cfg = ExperimentConfig::parse(
            "[[scenario.degradation]]\nstart = 0.0\n[[scenario.degradation.choice]]\ngps = { noise = 10.0 }\n",
        )
        .unwrap();
        let p = &cfg.scenario.schedule.phases[0].choices[0];
        assert_eq!(p.0, 1.0);
        assert_eq!(p.1.get(Modality::Gps).noise, 10.0);
        assert_eq!(p.1.get(Modality::Hd).noise, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        for (text, path) in [
            ("epoch = 3", "epoch"),
            ("[train]\nlearning_rat = 0.1", "train.learning_rat"),
            ("[scenario.channel]\nantenas = 4", "scenario.channel.antenas"),
            ("[train.model]\nheadz = 2", "train.model.headz"),
            (
                "[[scenario.degradation]]\n[[scenario.degradation.choice]]\ngps = { nois = 1.0 }",
                "scenario.degradation.0.choice.0.gps.nois",
            ),
        ] {
            match ExperimentConfig::parse(text) {
                Err(LabError::Config(msg)) => assert!(msg.contains(path), "{msg}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn wrong_types_and_invalid_values_are_config_errors() {
        for text in [
            "[train]\nepochs = \"many\"",
            "[train]\nepochs = -1",
            "[train]\nbatch_size = 1",
            "split_fraction = 1.5",
            "[train]\nvariant = \"sam3b\"",
            "[train]\nalpha_mode = \"sometimes\"",
            "[scenario.trajectory]\nregion_min = [1.0, 2.0]",
            "variants = []",
            "not toml at all [",
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(LabError::Config(_))), "{text}");
        }
    }

    #[test]
    fn scenario_and_train_blocks_round_trip_alone() {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.camera.hfov = 1.234567890123;
        assert_eq!(scenario_from_text(&scenario_to_text(&cfg.scenario)).unwrap(), cfg.scenario);
        cfg.train.variant = Variant::NoBbox;
        assert_eq!(train_from_text(&train_to_text(&cfg.train)).unwrap(), cfg.train);
    }
}
