//! Digit-to-digit exemplars on MNIST with transition strips.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{classifier_curve_csv, vae_curve_csv, Artifacts, SeedStream, Stage};
use crate::data::load_idx;
use crate::error::{Error, Result};
use crate::export::{xgem_csv, xgem_sidecar};
use crate::nn::{
    quality_gate, train_classifier, train_vae, Activation, BlackBox, Head, MlpSpec, Optimizer, TrainConfig, VaeSpec,
};
use crate::par::{self, Execution};
use crate::plot::{image_strip, Tile};
use crate::xgem::{find_xgem, XGemConfig, XGemResult};

/// Environment variable consulted when the config leaves `data_dir` unset.
pub const MNIST_DIR_ENV: &str = "XGEMS_MNIST_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistConfig {
    pub data_dir: Option<PathBuf>,
    pub images_file: String,
    pub labels_file: String,
    /// Leading records used for training.
    pub train_n: usize,
    /// Records after the training block from which sources are drawn.
    pub pool_n: usize,
    pub vae: VaeSpec,
    pub vae_train: TrainConfig,
    pub quality_threshold: f64,
    pub classifier: MlpSpec,
    pub classifier_train: TrainConfig,
    /// `(source digit, target digit)` pairs.
    pub pairs: Vec<[usize; 2]>,
    pub xgem: XGemConfig,
    /// Tiles per transition strip, including source and switch step.
    pub strip_len: usize,
    pub execution: Execution,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            images_file: "train-images-idx3-ubyte".into(),
            labels_file: "train-labels-idx1-ubyte".into(),
            train_n: 6000,
            pool_n: 1000,
            vae: VaeSpec {
                data_dim: 784,
                latent_dim: 16,
                hidden: vec![256],
                activation: Activation::Relu,
                output_head: Head::Sigmoid,
                kl_weight: 1.0,
            },
            vae_train: TrainConfig {
                epochs: 10,
                batch_size: 100,
                learning_rate: 1e-3,
                optimizer: Optimizer::default(),
                seed: 0,
            },
            quality_threshold: 40.0,
            classifier: MlpSpec::new(784, &[128], Activation::Relu, 10, Head::Softmax),
            classifier_train: TrainConfig {
                epochs: 5,
                batch_size: 100,
                learning_rate: 1e-3,
                optimizer: Optimizer::default(),
                seed: 0,
            },
            pairs: vec![[0, 6], [1, 7], [2, 3], [3, 8], [4, 9], [5, 3], [6, 5], [7, 9], [8, 3], [9, 4]],
            xgem: XGemConfig {
                lambda: 20.0,
                eta: 0.05,
                max_iters: 500,
                ..XGemConfig::default()
            },
            strip_len: 8,
            execution: Execution::default(),
        }
    }
}

impl MnistConfig {
    pub(crate) fn reseed(&mut self, s: &SeedStream) {
        self.vae_train.seed = s.get("vae");
        self.classifier_train.seed = s.get("classifier");
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.vae.validate()?;
        self.vae_train.validate()?;
        self.classifier.validate()?;
        self.classifier_train.validate()?;
        self.xgem.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        let classes = self.classifier.output_dim();
        for &[s, t] in &self.pairs {
            if s == t {
                return Err(Error::SameLabel(s));
            }
            if s >= classes || t >= classes {
                return bad("pair digits must be below the classifier's class count");
            }
        }
        if self.vae.data_dim != self.classifier.input_dim() {
            return bad("vae data_dim and classifier input width differ");
        }
        if self.train_n == 0 || self.pool_n == 0 || self.strip_len < 2 {
            return bad("need train_n > 0, pool_n > 0 and strip_len >= 2");
        }
        if !(self.quality_threshold > 0.0) {
            return bad("quality_threshold must be positive");
        }
        Ok(())
    }

    /// Data directory from the config or the environment.
    pub fn resolve_dir(&self) -> Option<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from))
    }

    fn files(&self, dir: &Path) -> (PathBuf, PathBuf) {
        (dir.join(&self.images_file), dir.join(&self.labels_file))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub source: usize,
    pub target: usize,
    /// Pool index of the source image, if one was classified correctly.
    pub sample: Option<usize>,
    pub switch_index: Option<usize>,
    pub exemplar_label: Option<usize>,
    pub exemplar_confidence: Option<f64>,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnistSummary {
    pub reconstruction_error: f64,
    pub pool_accuracy: f64,
    pub pairs: Vec<PairOutcome>,
    pub successes: usize,
}

/// Runs the gallery; `Ok(None)` when the IDX files are not available.
pub fn run_mnist_xgem(c: &MnistConfig, stage: Stage, art: &mut Artifacts) -> Result<Option<MnistSummary>> {
    let Some(dir) = c.resolve_dir() else {
        return Ok(None);
    };
    let (images, labels) = c.files(&dir);
    if !images.exists() || !labels.exists() {
        return Ok(None);
    }
    let all = load_idx(&images, &labels)?;
    if all.len() < c.train_n + c.pool_n {
        return Err(Error::InvalidConfig(format!(
            "{} records available, train_n + pool_n = {}",
            all.len(),
            c.train_n + c.pool_n
        )));
    }
    let train = all.take(c.train_n);
    let pool = all.subset(&(c.train_n..c.train_n + c.pool_n).collect::<Vec<_>>());
    let shape = all.image_shape().unwrap_or([1, all.dim()]);
    let x = train.features()?;
    let (vae, vae_report) = train_vae(&x, &c.vae, &c.vae_train)?;
    let reconstruction_error = quality_gate(&vae, &pool.features()?, c.quality_threshold)?;
    let (clf, clf_report) = train_classifier(&x, &train.labels(), &c.classifier, &c.classifier_train)?;
    let pool_accuracy = clf.accuracy(&pool.features()?, &pool.labels())?;
    art.model("models/vae.ckpt", &vae)?;
    art.model("models/classifier.ckpt", &clf)?;
    art.write("training/vae.csv", vae_curve_csv(&vae_report))?;
    art.write("training/classifier.csv", classifier_curve_csv(&clf_report))?;
    let mut summary = MnistSummary {
        reconstruction_error,
        pool_accuracy,
        pairs: Vec::new(),
        successes: 0,
    };
    if stage == Stage::Train {
        art.json("report.json", &summary)?;
        return Ok(Some(summary));
    }

    let sources: Vec<Option<usize>> = c
        .pairs
        .iter()
        .map(|&[s, _]| -> Result<Option<usize>> {
            for (i, r) in pool.records().iter().enumerate() {
                if r.y == s && clf.predict(&r.x)? == s {
                    return Ok(Some(i));
                }
            }
            Ok(None)
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, [usize; 2], Option<usize>)> =
        c.pairs.iter().zip(&sources).enumerate().map(|(k, (&p, &s))| (k, p, s)).collect();
    let results = par::map(c.execution, &jobs, |_, &(_, [s, t], src)| -> Result<Option<XGemResult>> {
        match src {
            Some(i) => Ok(Some(find_xgem(&pool.records()[i].x, s, t, &vae, &clf, &c.xgem)?)),
            None => Ok(None),
        }
    });

    let mut gallery = String::from("pair,source,target,sample,switch_index,exemplar_label,exemplar_confidence,success\n");
    for ((k, [s, t], src), res) in jobs.into_iter().zip(results) {
        let res = res?;
        let mut outcome = PairOutcome {
            source: s,
            target: t,
            sample: src,
            switch_index: None,
            exemplar_label: None,
            exemplar_confidence: None,
            success: false,
        };
        if let Some(res) = &res {
            let p = clf.predict_proba(&res.exemplar)?;
            let label = p.argmax();
            outcome.switch_index = res.trajectory.switch_index;
            outcome.exemplar_label = Some(label);
            outcome.exemplar_confidence = Some(p.data()[t]);
            outcome.success = label == t && p.data()[t] >= 0.5;
            let stem = format!("pairs/pair_{k:02}_{s}_to_{t}");
            art.write(&format!("{stem}.csv"), xgem_csv(res))?;
            art.write(&format!("{stem}.json"), xgem_sidecar(&c.xgem, res)?)?;
            art.figure(&format!("{stem}_strip"), strip(c, res, shape, &clf)?)?;
        }
        let o = |v: Option<String>| v.unwrap_or_default();
        gallery.push_str(&format!(
            "{k},{s},{t},{},{},{},{},{}\n",
            o(outcome.sample.map(|v| v.to_string())),
            o(outcome.switch_index.map(|v| v.to_string())),
            o(outcome.exemplar_label.map(|v| v.to_string())),
            o(outcome.exemplar_confidence.map(|v| v.to_string())),
            outcome.success
        ));
        summary.pairs.push(outcome);
    }
    summary.successes = summary.pairs.iter().filter(|p| p.success).count();
    art.write("gallery.csv", gallery)?;
    art.json("report.json", &summary)?;
    Ok(Some(summary))
}

/// Evenly spaced steps from the start to the switch point (or the last
/// step); the switch tile is highlighted.
fn strip(c: &MnistConfig, res: &XGemResult, shape: [usize; 2], clf: &crate::nn::Classifier) -> Result<(String, String)> {
    let steps = &res.trajectory.steps;
    let end = res.trajectory.switch_index.unwrap_or(steps.len() - 1);
    let n = c.strip_len.min(end + 1);
    let mut picks: Vec<usize> = (0..n)
        .map(|j| if n == 1 { 0 } else { j * end / (n - 1) })
        .collect();
    picks.dedup();
    let mut tiles = Vec::with_capacity(picks.len());
    for i in picks {
        let p = clf.predict_proba(&steps[i].x)?;
        let label = p.argmax();
        tiles.push(Tile {
            pixels: steps[i].x.data().to_vec(),
            shape,
            caption: format!("{i}: {label} ({:.2})", p.data()[label]),
            highlight: Some(i) == res.trajectory.switch_index,
        });
    }
    let src = &res.trajectory.source;
    Ok(image_strip(&format!("{} to {}", src.y, src.y_tar), &tiles))
}
