use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use xgems_core::data::{gen_attributed, write_idx_images, write_idx_labels, SyntheticAttrConfig};
use xgems_core::experiments::{ExperimentConfig, RunManifest};

fn xgems(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xgems"))
        .args(args)
        .env_remove("XGEMS_MNIST_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_PARABOLA: &str = r#"
kind = "parabola_fig1"
seed = 3
[parabola_fig1]
samples = 4
[parabola_fig1.xgem]
lambda = 0.5
eta = 0.01
max_iters = 400
"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap();
            cfg.resolve().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert_eq!(n, 4);
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write(dir.path(), "typo.toml", "kind = \"parabola_fig1\"\nsed = 1\n");
    let o = xgems(&["report", "--config", s(&typo)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));

    let o = xgems(&["report", "--config", s(&dir.path().join("absent.toml"))]);
    assert_eq!(code(&o), 1);

    let bias = write(dir.path(), "bias.toml", "kind = \"bias_audit\"\n");
    let o = xgems(&["xgem", "--config", s(&bias)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("parabola_fig1"));

    let o = xgems(&["report"]);
    assert_eq!(code(&o), 1);

    let o = xgems(&["frobnicate"]);
    assert_eq!(code(&o), 1);

    let same = write(
        dir.path(),
        "same.toml",
        "kind = \"mnist_xgem\"\n[mnist_xgem]\npairs = [[3, 3]]\n",
    );
    let o = xgems(&["mnist", "--config", s(&same)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn quality_gate_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "gate.toml",
        "kind = \"parabola_fig1\"\n[parabola_fig1]\nsamples = 2\nquality_threshold = 1e-12\n",
    );
    let o = xgems(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("quality gate"));
}

#[test]
fn report_and_rerun_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", SMALL_PARABOLA);
    let first = dir.path().join("first");
    let o = xgems(&["report", "--config", s(&cfg), "--out", s(&first)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("pgd farther fraction"));
    for f in ["fig1.svg", "fig1.csv", "pairs.csv", "report.json", "models/vae.ckpt", "trajectories/xgem_003.csv"] {
        assert!(first.join(f).exists(), "{f}");
    }

    let second = dir.path().join("second");
    let o = xgems(&["report", "--manifest", s(&first.join("manifest.json")), "--out", s(&second)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("reproduced bitwise"));
    let a = RunManifest::load(first.join("manifest.json")).unwrap();
    let b = RunManifest::load(second.join("manifest.json")).unwrap();
    assert_eq!(a.artifacts, b.artifacts);

    // A seed override changes the run.
    let third = dir.path().join("third");
    let o = xgems(&["report", "--config", s(&cfg), "--seed", "4", "--out", s(&third)]);
    assert_eq!(code(&o), 0);
    let c = RunManifest::load(third.join("manifest.json")).unwrap();
    assert_eq!(c.seed, 4);
    assert_ne!(a.artifacts["pairs.csv"], c.artifacts["pairs.csv"]);
}

#[test]
fn stage_verbs_write_their_own_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", SMALL_PARABOLA);
    let (x, a, t) = (dir.path().join("x"), dir.path().join("a"), dir.path().join("t"));
    assert_eq!(code(&xgems(&["xgem", "--config", s(&cfg), "--out", s(&x)])), 0);
    assert_eq!(code(&xgems(&["attack", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(code(&xgems(&["train", "--config", s(&cfg), "--out", s(&t)])), 0);
    assert!(x.join("trajectories/xgem_000.json").exists());
    assert!(!x.join("trajectories/pgd_000.csv").exists());
    assert!(a.join("trajectories/pgd_000.csv").exists());
    assert!(!a.join("trajectories/xgem_000.csv").exists());
    assert!(t.join("models/classifier.ckpt").exists());
    assert!(t.join("data/features.bin").exists());
    assert!(!t.join("pairs.csv").exists());
    let csv = fs::read_to_string(x.join("trajectories/xgem_000.csv")).unwrap();
    assert!(csv.starts_with("iter,z0,objective,p0,p1,distance_from_origin\n"));
}

#[test]
fn refuses_to_mix_experiments_in_one_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", SMALL_PARABOLA);
    let out = dir.path().join("out");
    assert_eq!(code(&xgems(&["train", "--config", s(&cfg), "--out", s(&out)])), 0);
    let mnist = write(dir.path(), "m.toml", "kind = \"mnist_xgem\"\n");
    let o = xgems(&["mnist", "--config", s(&mnist), "--out", s(&out)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn mnist_without_data_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = xgems(&["mnist", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("skipped"));
    let m = RunManifest::load(out.join("manifest.json")).unwrap();
    assert!(matches!(m.status, xgems_core::experiments::RunStatus::Skipped { .. }));
}

/// Two-class 16x16 images written as an IDX pair.
fn fake_idx(dir: &Path) {
    let ds = gen_attributed(&SyntheticAttrConfig {
        n: 400,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let images: Vec<Vec<f64>> = ds.records().iter().map(|r| r.x.data().to_vec()).collect();
    let labels: Vec<u8> = ds.records().iter().map(|r| r.y as u8).collect();
    fs::write(dir.join("imgs"), write_idx_images(16, 16, &images).unwrap()).unwrap();
    fs::write(dir.join("lbls"), write_idx_labels(&labels)).unwrap();
}

fn mnist_config(dir: &Path) -> String {
    format!(
        r#"
kind = "mnist_xgem"
seed = 2
[mnist_xgem]
data_dir = "{}"
images_file = "imgs"
labels_file = "lbls"
train_n = 300
pool_n = 100
quality_threshold = 2.0
pairs = [[0, 1], [1, 0]]
strip_len = 5
classifier = {{ widths = [256, 32, 2], activations = ["relu"], head = "softmax" }}
[mnist_xgem.vae]
data_dim = 256
latent_dim = 4
hidden = [64]
activation = "relu"
output_head = "sigmoid"
kl_weight = 1.0
[mnist_xgem.vae_train]
epochs = 15
batch_size = 32
learning_rate = 0.003
[mnist_xgem.classifier_train]
epochs = 10
batch_size = 32
learning_rate = 0.001
[mnist_xgem.xgem]
lambda = 5.0
eta = 0.05
max_iters = 300
"#,
        dir.display()
    )
}

#[test]
fn mnist_pipeline_on_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    fake_idx(dir.path());
    let cfg = write(dir.path(), "m.toml", &mnist_config(dir.path()));
    let out = dir.path().join("out");
    let o = xgems(&["mnist", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("successful pairs"));
    let gallery = fs::read_to_string(out.join("gallery.csv")).unwrap();
    assert_eq!(gallery.lines().count(), 3);
    assert!(out.join("pairs/pair_00_0_to_1_strip.svg").exists());
}

#[test]
fn corrupt_idx_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    fake_idx(dir.path());
    let mut bytes = fs::read(dir.path().join("imgs")).unwrap();
    bytes[3] = 0x01; // magic 2049: a label file
    fs::write(dir.path().join("imgs"), bytes).unwrap();
    let cfg = write(dir.path(), "m.toml", &mnist_config(dir.path()));
    let o = xgems(&["mnist", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("magic"));
}
