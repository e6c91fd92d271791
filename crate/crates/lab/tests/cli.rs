use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use sam2b_lab::config::ExperimentConfig;
use sam2b_lab::format::{load_dataset, save_dataset};

const SMOKE: &str = r#"
variants = ["sam2b", "fixed_weight"]

[scenario]
seed = 5

[scenario.trajectory]
duration = 4.0

[scenario.camera]
width = 16
height = 16

[train]
epochs = 2
batch_size = 4

[train.model]
embed_dim = 8
roi_size = 4
conv1_filters = 2
conv2_filters = 2
image_hidden = 4
vector_hidden = 4
heads = 2
score_hidden = 4
cue_hidden = 4
"#;

fn sam2b(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sam2b")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sam2b(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

struct Smoke {
    dir: tempfile::TempDir,
}

impl Smoke {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("smoke.toml"), SMOKE).unwrap();
        let smoke = Smoke { dir };
        ok(&["gen", "--config", s(&smoke.config()), "--out", s(&smoke.dataset())]);
        smoke
    }
    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }
    fn config(&self) -> std::path::PathBuf {
        self.path("smoke.toml")
    }
    fn dataset(&self) -> std::path::PathBuf {
        self.path("data.s2mb")
    }
}

#[test]
fn gen_round_trips_and_is_deterministic() {
    let smoke = Smoke::new();
    let ds = load_dataset(&smoke.dataset()).unwrap();
    assert_eq!(ds.len(), 8);
    assert_eq!(ds.config, ExperimentConfig::parse(SMOKE).unwrap().scenario);
    let again = smoke.path("again.s2mb");
    let out = ok(&["gen", "--config", s(&smoke.config()), "--out", s(&again)]);
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(smoke.dataset()).unwrap());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("N = 8, Q = 32"), "{text}");
    assert!(text.contains("label histogram"));
    assert!(smoke.path("data.s2mb.manifest.toml").exists());
}

#[test]
fn seed_flag_overrides_the_config() {
    let smoke = Smoke::new();
    let other = smoke.path("other.s2mb");
    ok(&["gen", "--config", s(&smoke.config()), "--out", s(&other), "--seed", "6"]);
    let ds = load_dataset(&other).unwrap();
    assert_eq!(ds.config.seed, 6);
    assert_ne!(ds.samples, load_dataset(&smoke.dataset()).unwrap().samples);
}

#[test]
fn los_sweep_covers_most_beams() {
    // close-in flight along the array face, sine of the direction reaching ±0.9
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(
        &cfg,
        "[scenario.trajectory]\nduration = 120.0\nstart = [15.0, -80.0, 20.0]\n\
         waypoints = [[15.0, 80.0, 20.0], [15.0, -80.0, 20.0]]\n\
         [scenario.channel]\nnlos_paths = 0\nrician_k_db = inf\n\
         [scenario.camera]\nwidth = 8\nheight = 8\n",
    )
    .unwrap();
    let data = dir.path().join("sweep.s2mb");
    ok(&["gen", "--config", s(&cfg), "--out", s(&data)]);
    let hist = load_dataset(&data).unwrap().label_histogram();
    let covered = hist.iter().filter(|&&c| c > 0).count();
    assert!(covered * 10 > 8 * hist.len(), "{covered} of {} beams: {hist:?}", hist.len());
}

#[test]
fn train_writes_the_documented_outputs_reproducibly() {
    let smoke = Smoke::new();
    let run = |name: &str| {
        let out = smoke.path(name);
        let started = Instant::now();
        ok(&[
            "train",
            "--config",
            s(&smoke.config()),
            "--dataset",
            s(&smoke.dataset()),
            "--out",
            s(&out),
        ]);
        assert!(started.elapsed().as_secs_f64() < 10.0);
        out
    };
    let a = run("a");
    let b = run("b");
    let metrics = read(&a.join("metrics.csv"));
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("variant,top1,top2,top3"));
    assert!(lines.next().unwrap().starts_with("sam2b,"));
    let curve = read(&a.join("curve.csv"));
    assert_eq!(curve.lines().next(), Some("epoch,loss,top1"));
    assert_eq!(curve.lines().count(), 1 + 2);
    for f in ["metrics.csv", "curve.csv", "model.s2ck", "config.resolved.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let resolved = ExperimentConfig::parse(&read(&a.join("config.resolved.toml"))).unwrap();
    assert_eq!(resolved, ExperimentConfig::parse(SMOKE).unwrap());
    assert!(read(&a.join("train.log")).contains("epoch 2"));

    let e = smoke.path("eval");
    ok(&["eval", "--checkpoint", s(&a.join("model.s2ck")), "--dataset", s(&smoke.dataset()), "--out", s(&e)]);
    assert_eq!(read(&e.join("metrics.csv")), metrics);
}

#[test]
fn variant_flag_and_out_dir_key() {
    let smoke = Smoke::new();
    let dir = smoke.path("from_config");
    let cfg = smoke.path("with_out.toml");
    std::fs::write(&cfg, format!("out_dir = {:?}\n{SMOKE}", s(&dir))).unwrap();
    ok(&["train", "--config", s(&cfg), "--dataset", s(&smoke.dataset()), "--variant", "mm_aid"]);
    assert!(read(&dir.join("metrics.csv")).contains("\nmm_aid,"));
}

#[test]
fn ablate_table_has_one_row_per_variant() {
    let smoke = Smoke::new();
    let run = |name: &str| {
        let out = smoke.path(name);
        ok(&["ablate", "--config", s(&smoke.config()), "--dataset", s(&smoke.dataset()), "--out", s(&out)]);
        read(&out.join("ablation.csv"))
    };
    let table = run("a");
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("variant,status,top1,top2,top3,clean_count"));
    assert!(rows[1].starts_with("sam2b,ok,"));
    assert!(rows[2].starts_with("fixed_weight,ok,"));
    assert_eq!(run("b"), table);
}

#[test]
fn inspect_weights_rows_are_simplex_points() {
    let smoke = Smoke::new();
    let run = smoke.path("run");
    ok(&["train", "--config", s(&smoke.config()), "--dataset", s(&smoke.dataset()), "--out", s(&run)]);
    let ck = run.join("model.s2ck");
    let w = smoke.path("w");
    ok(&["inspect-weights", "--checkpoint", s(&ck), "--dataset", s(&smoke.dataset()), "--out", s(&w)]);
    let mut reader = csv::Reader::from_path(w.join("weights.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..5], ["time", "w_img", "w_gps", "w_hd", "w_pos"]);
    assert_eq!(header.len(), 5 + 16);
    assert_eq!(header[5], "img_noise");
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 8 - 5);
    for r in rows {
        let sum: f64 = (1..5).map(|i| r[i].parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9, "{sum}");
    }
    let mismatch = sam2b(&[
        "inspect-weights",
        "--checkpoint",
        s(&ck),
        "--dataset",
        s(&smoke.dataset()),
        "--out",
        s(&w),
        "--variant",
        "no_bbox",
    ]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn fixed_weight_checkpoints_have_no_weights_to_inspect() {
    let smoke = Smoke::new();
    let run = smoke.path("fw");
    ok(&[
        "train",
        "--config",
        s(&smoke.config()),
        "--dataset",
        s(&smoke.dataset()),
        "--out",
        s(&run),
        "--variant",
        "fixed_weight",
    ]);
    let out = sam2b(&[
        "inspect-weights",
        "--checkpoint",
        s(&run.join("model.s2ck")),
        "--dataset",
        s(&smoke.dataset()),
        "--out",
        s(&smoke.path("w")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fixed_weight has no dynamic modality weights"));
}

#[test]
fn exit_codes_separate_config_io_and_training_failures() {
    let smoke = Smoke::new();
    let bad = smoke.path("bad.toml");
    std::fs::write(&bad, "[train]\nlerning_rate = 0.1\n").unwrap();
    let out = sam2b(&["gen", "--config", s(&bad), "--out", s(&smoke.path("x.s2mb"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.lerning_rate"));

    let missing = sam2b(&["train", "--dataset", s(&smoke.path("nope.s2mb")), "--out", s(&smoke.path("o"))]);
    assert_eq!(missing.status.code(), Some(3));

    let corrupt = smoke.path("corrupt.s2mb");
    let mut bytes = std::fs::read(smoke.dataset()).unwrap();
    let n = bytes.len();
    bytes.truncate(n - 100);
    std::fs::write(&corrupt, bytes).unwrap();
    let out = sam2b(&["train", "--config", s(&smoke.config()), "--dataset", s(&corrupt), "--out", s(&smoke.path("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));

    let mut ds = load_dataset(&smoke.dataset()).unwrap();
    ds.samples[1].gps[0] = f64::NAN;
    let poisoned = smoke.path("nan.s2mb");
    save_dataset(&poisoned, &ds).unwrap();
    let out = sam2b(&["train", "--config", s(&smoke.config()), "--dataset", s(&poisoned), "--out", s(&smoke.path("o"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    let no_out = sam2b(&["train", "--config", s(&smoke.config()), "--dataset", s(&smoke.dataset())]);
    assert_eq!(no_out.status.code(), Some(2));
}
