//! The work behind each CLI verb. Every output is a pure function of the
//! inputs and seeds; wall-clock time only goes into `train.log`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sam2b_core::model::{Model, Prediction, Variant};
use sam2b_core::sensors::{build_dataset, Dataset, Modality, Sample};
use sam2b_core::trainer::{metrics_from, split, top_k_accuracy, train, EpochLog, Metrics, TrainConfig, DEGRADED_NOISE};

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::format::{load_checkpoint, Checkpoint, load_dataset, save_checkpoint, save_dataset};

pub const CHECKPOINT_FILE: &str = "model.s2ck";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const LOG_FILE: &str = "train.log";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn num(v: f64) -> String {
    v.to_string()
}

/// Simulates the configured scenario and writes it plus its manifest.
pub fn gen(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let ds = build_dataset(&cfg.scenario)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_dataset(out, &ds)?;
    Ok(ds)
}

pub fn write_metrics(path: &Path, rows: &[(Variant, &Metrics)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["variant", "top1", "top2", "top3"])?;
    for (v, m) in rows {
        w.write_record([v.name(), num(m.top1), num(m.top2), num(m.top3)])?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn write_curve(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "loss", "top1"])?;
    for e in log {
        w.write_record([e.epoch.to_string(), num(e.loss), num(e.top1)])?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub metrics: Metrics,
}

/// Trains `cfg.train.variant` and writes checkpoint, metrics, curve,
/// resolved config and log into `out_dir`.
pub fn train_run(cfg: &ExperimentConfig, dataset: &Path, out_dir: &Path) -> Result<TrainRun> {
    let ds = load_dataset(dataset)?;
    ensure_dir(out_dir)?;
    write_text(&out_dir.join(RESOLVED_CONFIG_FILE), &cfg.to_text())?;
    let started = Instant::now();
    let outcome = train(&ds, &cfg.train)?;
    let variant = cfg.train.variant;
    save_checkpoint(&out_dir.join(CHECKPOINT_FILE), &outcome.model, &cfg.train)?;
    write_metrics(&out_dir.join(METRICS_FILE), &[(variant, &outcome.metrics)])?;
    write_curve(&out_dir.join(CURVE_FILE), &outcome.log)?;
    let mut log = String::new();
    for e in &outcome.log {
        log += &format!("epoch {} loss {} top1 {}\n", e.epoch, e.loss, e.top1);
    }
    log += &format!("finished {variant} in {:.3} s\n", started.elapsed().as_secs_f64());
    write_text(&out_dir.join(LOG_FILE), &log)?;
    Ok(TrainRun {
        model: outcome.model,
        log: outcome.log,
        metrics: outcome.metrics,
    })
}

/// Test split of `ds` under the checkpoint's split fraction.
fn test_split<'a>(ds: &'a Dataset, train_cfg: &TrainConfig) -> Result<&'a [Sample]> {
    Ok(split(&ds.samples, train_cfg.split_fraction)?.1)
}

/// Evaluates a checkpoint on the test split of a dataset.
pub fn eval(checkpoint: &Path, dataset: &Path, out_dir: &Path) -> Result<Metrics> {
    let Checkpoint { model, train: cfg } = load_checkpoint(checkpoint, None)?;
    let ds = load_dataset(dataset)?;
    let test = test_split(&ds, &cfg)?;
    let preds = model.predict(&model.features_all(test)?)?;
    let metrics = metrics_from(model.modalities(), test, &preds);
    ensure_dir(out_dir)?;
    write_metrics(&out_dir.join(METRICS_FILE), &[(model.variant, &metrics)])?;
    Ok(metrics)
}

/// Top-k on a subset of the test split.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SubsetScore {
    pub count: usize,
    pub top: [f64; 3],
}

fn subset(preds: &[Prediction], samples: &[Sample], keep: impl Fn(&Sample) -> bool) -> SubsetScore {
    let (count, top) = top_k_accuracy(
        preds
            .iter()
            .zip(samples)
            .filter(|(_, s)| keep(s))
            .map(|(p, s)| (&p.logits[..], s.label())),
    );
    SubsetScore { count, top }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// `Err` carries the failure message; the other variants still run.
    pub outcome: std::result::Result<AblationScores, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationScores {
    pub all: SubsetScore,
    pub clean: SubsetScore,
    pub degraded: SubsetScore,
    /// Mean paired cosine similarity over off-diagonal modality pairs.
    pub mean_similarity: Option<f64>,
}

fn mean_off_diagonal(preds: &[Prediction]) -> Option<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for p in preds {
        for (i, row) in p.similarity.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    acc += v;
                    n += 1;
                }
            }
        }
    }
    (n > 0).then(|| acc / n as f64)
}

/// Scores a trained model on the test samples.
pub fn score(model: &Model, test: &[Sample]) -> Result<(AblationScores, Vec<Prediction>)> {
    let preds = model.predict(&model.features_all(test)?)?;
    let scores = AblationScores {
        all: subset(&preds, test, |_| true),
        clean: subset(&preds, test, |s| !s.is_degraded(DEGRADED_NOISE)),
        degraded: subset(&preds, test, |s| s.is_degraded(DEGRADED_NOISE)),
        mean_similarity: mean_off_diagonal(&preds),
    };
    Ok((scores, preds))
}

/// Trains every configured variant with the same seed and split.
pub fn ablate_dataset(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<AblationRow>> {
    let (_, test) = split(&ds.samples, cfg.train.split_fraction)?;
    let mut rows = Vec::new();
    for &variant in &cfg.variants {
        let tc = TrainConfig {
            variant,
            ..cfg.train.clone()
        };
        let outcome = train(ds, &tc)
            .map_err(LabError::from)
            .and_then(|o| score(&o.model, test).map(|(s, _)| s))
            .map_err(|e| e.to_string());
        rows.push(AblationRow { variant, outcome });
    }
    Ok(rows)
}

pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "variant",
        "status",
        "top1",
        "top2",
        "top3",
        "clean_count",
        "clean_top1",
        "clean_top2",
        "clean_top3",
        "degraded_count",
        "degraded_top1",
        "degraded_top2",
        "degraded_top3",
        "mean_similarity",
    ])?;
    for row in rows {
        let mut rec = vec![row.variant.name()];
        match &row.outcome {
            Ok(s) => {
                rec.push("ok".into());
                rec.extend(s.all.top.iter().map(|&v| num(v)));
                for sub in [&s.clean, &s.degraded] {
                    rec.push(sub.count.to_string());
                    rec.extend(sub.top.iter().map(|&v| num(v)));
                }
                rec.push(s.mean_similarity.map(num).unwrap_or_default());
            }
            Err(msg) => {
                rec.push(format!("failed: {msg}"));
                rec.extend(std::iter::repeat_n(String::new(), 12));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn ablate(cfg: &ExperimentConfig, dataset: &Path, out_dir: &Path) -> Result<Vec<AblationRow>> {
    let ds = load_dataset(dataset)?;
    ensure_dir(out_dir)?;
    write_text(&out_dir.join(RESOLVED_CONFIG_FILE), &cfg.to_text())?;
    let rows = ablate_dataset(cfg, &ds)?;
    write_ablation(&out_dir.join(ABLATION_FILE), &rows)?;
    Ok(rows)
}

/// One weights.csv row.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightRow {
    pub time: f64,
    /// In Img, GPS, HD, Pos order; modalities the variant lacks get 0.
    pub weights: [f64; 4],
    pub truth: sam2b_core::sensors::DegradationTruth,
}

pub fn weight_rows(model: &Model, test: &[Sample]) -> Result<Vec<WeightRow>> {
    if !model.variant.dynamic_weights() {
        return Err(sam2b_core::Error::UnsupportedVariant(model.variant.name()).into());
    }
    let preds = model.predict(&model.features_all(test)?)?;
    Ok(preds
        .iter()
        .zip(test)
        .map(|(p, s)| {
            let mut weights = [0.0; 4];
            for (m, w) in model.modalities().iter().zip(&p.weights) {
                weights[m.index()] = *w;
            }
            WeightRow {
                time: s.time,
                weights,
                truth: s.truth,
            }
        })
        .collect())
}

pub fn write_weights(path: &Path, rows: &[WeightRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["time".to_string()];
    header.extend(Modality::ALL.iter().map(|m| format!("w_{}", m.name())));
    for m in Modality::ALL {
        for level in ["noise", "staleness", "dropped", "occlusion"] {
            header.push(format!("{}_{level}", m.name()));
        }
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![num(r.time)];
        rec.extend(r.weights.iter().map(|&v| num(v)));
        rec.extend(r.truth.iter().flatten().map(|&v| num(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Per-test-sample modality weights next to the injected degradation.
pub fn inspect_weights(checkpoint: &Path, dataset: &Path, out_dir: &Path) -> Result<PathBuf> {
    let Checkpoint { model, train: cfg } = load_checkpoint(checkpoint, None)?;
    if !model.variant.dynamic_weights() {
        return Err(sam2b_core::Error::UnsupportedVariant(model.variant.name()).into());
    }
    let ds = load_dataset(dataset)?;
    let rows = weight_rows(&model, test_split(&ds, &cfg)?)?;
    ensure_dir(out_dir)?;
    let path = out_dir.join(WEIGHTS_FILE);
    write_weights(&path, &rows)?;
    Ok(path)
}
