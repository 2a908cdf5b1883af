//! Confidence manifolds, logistic fits, fit-parameter histograms and
//! reliability diagrams for two classifier architectures over training.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bias::image_vae;
use super::{classifier_curve_csv, vae_curve_csv, Artifacts, SeedStream, Stage};
use crate::analytics::{
    confidence_manifold, fit_logistic, logistic, param_histogram2d, reliability_diagram, shift_align,
    ConfidenceManifold, Curve, LogisticFit, ManifoldMeta, StratumKey,
};
use crate::data::{gen_attributed, AttributedDataset, SyntheticAttrConfig};
use crate::error::{Error, Result};
use crate::nn::{
    quality_gate, train_classifier_with_checkpoints, train_vae, Activation, Classifier, Head, MlpSpec, Optimizer,
    TrainConfig, VaeSpec,
};
use crate::par::{self, Execution};
use crate::plot::{heatmap, Figure, Mark, Series, PALETTE};
use crate::rng;
use crate::xgem::{batch_xgems, ResultMode, TargetPolicy, XGemConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedModel {
    pub name: String,
    pub spec: MlpSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldsConfig {
    /// Image family; `n` and `seed` are set per split.
    pub images: SyntheticAttrConfig,
    pub train_n: usize,
    pub eval_n: usize,
    pub vae: VaeSpec,
    pub vae_train: TrainConfig,
    pub quality_threshold: f64,
    pub models: Vec<NamedModel>,
    pub classifier_train: TrainConfig,
    /// Epochs at which snapshots are analysed; the final epoch is always
    /// included.
    pub checkpoints: Vec<usize>,
    pub xgem: XGemConfig,
    pub reliability_bins: usize,
    pub k_bins: usize,
    pub x0_bins: usize,
    /// Manifolds drawn per overlay plot.
    pub plot_limit: usize,
    pub execution: Execution,
}

impl Default for ManifoldsConfig {
    fn default() -> Self {
        let schedule = TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed: 0,
        };
        Self {
            images: SyntheticAttrConfig::default(),
            train_n: 2000,
            eval_n: 60,
            vae: image_vae(),
            vae_train: TrainConfig {
                epochs: 30,
                learning_rate: 2e-3,
                ..schedule.clone()
            },
            quality_threshold: 1.0,
            models: vec![
                NamedModel {
                    name: "shallow_relu".into(),
                    spec: MlpSpec::new(256, &[32], Activation::Relu, 2, Head::Softmax),
                },
                NamedModel {
                    name: "deep_tanh".into(),
                    spec: MlpSpec::new(256, &[64, 32], Activation::Tanh, 2, Head::Softmax),
                },
            ],
            classifier_train: schedule,
            checkpoints: vec![1, 3],
            xgem: XGemConfig {
                lambda: 5.0,
                eta: 0.05,
                max_iters: 200,
                result_mode: ResultMode::Converged,
                ..XGemConfig::default()
            },
            reliability_bins: crate::analytics::DEFAULT_BINS,
            k_bins: 8,
            x0_bins: 8,
            plot_limit: 12,
            execution: Execution::default(),
        }
    }
}

impl ManifoldsConfig {
    pub(crate) fn reseed(&mut self, s: &SeedStream) {
        self.images.seed = s.get("images");
        self.vae_train.seed = s.get("vae");
        self.classifier_train.seed = s.get("classifier");
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.images.validate()?;
        self.vae.validate()?;
        self.vae_train.validate()?;
        self.classifier_train.validate()?;
        self.xgem.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        let d = self.images.size * self.images.size;
        if self.vae.data_dim != d {
            return bad("vae data_dim must equal size * size");
        }
        if self.models.is_empty() {
            return bad("at least one model is required");
        }
        for m in &self.models {
            m.spec.validate()?;
            if m.spec.input_dim() != d || m.spec.output_dim() != 2 {
                return bad("models map size * size inputs to two classes");
            }
            if m.name.is_empty() || !m.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-') {
                return bad("model names must be non-empty and use [A-Za-z0-9_-]");
            }
        }
        if self.train_n < 4 || self.eval_n < 4 {
            return bad("every split needs at least 4 samples");
        }
        if self.reliability_bins < 2 || self.k_bins == 0 || self.x0_bins == 0 {
            return bad("need at least 2 reliability bins and 1 histogram bin per axis");
        }
        if !(self.quality_threshold > 0.0) {
            return bad("quality_threshold must be positive");
        }
        Ok(())
    }

    /// Analysed epochs in increasing order, ending at the final epoch.
    pub fn epochs(&self) -> Vec<usize> {
        let mut e: Vec<usize> = self
            .checkpoints
            .iter()
            .copied()
            .filter(|&e| e < self.classifier_train.epochs)
            .collect();
        e.push(self.classifier_train.epochs);
        e.sort_unstable();
        e.dedup();
        e
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub model: String,
    pub checkpoint: usize,
    pub sample: usize,
    pub y: usize,
    pub a: Option<u8>,
    pub status: String,
    pub fit: Option<LogisticFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub epoch: usize,
    pub eval_accuracy: f64,
    pub fits: usize,
    pub degenerate: usize,
    pub failed: usize,
    /// Means over non-degenerate fits.
    pub mean_k: Option<f64>,
    pub mean_x0: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub checkpoints: Vec<CheckpointSummary>,
    pub reliability_max_deviation: f64,
    /// Strata left out of the histograms because every fit was degenerate.
    pub empty_strata: Vec<StratumKey>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldsSummary {
    pub reconstruction_error: f64,
    pub models: Vec<ModelSummary>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn run_confidence_manifolds(c: &ManifoldsConfig, stage: Stage, art: &mut Artifacts) -> Result<ManifoldsSummary> {
    let split = |k: u64, n: usize| {
        gen_attributed(&SyntheticAttrConfig {
            n,
            seed: rng::derive(c.images.seed, k),
            ..c.images.clone()
        })
    };
    let (train, ev) = (split(0, c.train_n)?, split(1, c.eval_n)?);
    let x = train.features()?;
    let (vae, vae_report) = train_vae(&x, &c.vae, &c.vae_train)?;
    let reconstruction_error = quality_gate(&vae, &ev.features()?, c.quality_threshold)?;
    art.model("models/vae.ckpt", &vae)?;
    art.write("training/vae.csv", vae_curve_csv(&vae_report))?;
    let cfg_json = serde_json::to_value(&c.images)?;
    art.dataset("data/train", &train, cfg_json.clone(), Some(c.images.seed))?;
    art.dataset("data/eval", &ev, cfg_json, Some(c.images.seed))?;

    let epochs = c.epochs();
    let mut trained = Vec::new();
    for m in &c.models {
        let (snaps, report) = train_classifier_with_checkpoints(&x, &train.labels(), &m.spec, &c.classifier_train, &epochs)?;
        art.write(&format!("training/{}.csv", m.name), classifier_curve_csv(&report))?;
        for (e, clf) in &snaps {
            art.model(&format!("models/{}_e{e:03}.ckpt", m.name), clf)?;
        }
        trained.push((m, snaps));
    }
    let mut summary = ManifoldsSummary {
        reconstruction_error,
        models: Vec::new(),
    };
    if stage == Stage::Train {
        art.json("report.json", &summary)?;
        return Ok(summary);
    }

    let mut records = Vec::new();
    for (m, snaps) in &trained {
        let mut checkpoints = Vec::new();
        let mut last = Vec::new();
        for (epoch, clf) in snaps {
            let analysed = analyse(c, &ev, &vae, clf, *epoch)?;
            let fits: Vec<&LogisticFit> = analysed.iter().filter_map(|(_, f)| f.as_ref().map(|(_, f)| f)).collect();
            let good: Vec<&&LogisticFit> = fits.iter().filter(|f| !f.degenerate).collect();
            checkpoints.push(CheckpointSummary {
                epoch: *epoch,
                eval_accuracy: clf.accuracy(&ev.features()?, &ev.labels())?,
                fits: fits.len(),
                degenerate: fits.len() - good.len(),
                failed: analysed.iter().filter(|(s, _)| s == "failed").count(),
                mean_k: mean(&good.iter().map(|f| f.k).collect::<Vec<_>>()),
                mean_x0: mean(&good.iter().map(|f| f.x0).collect::<Vec<_>>()),
            });
            for (i, (status, fit)) in analysed.iter().enumerate() {
                let r = &ev.records()[i];
                records.push(FitRecord {
                    model: m.name.clone(),
                    checkpoint: *epoch,
                    sample: i,
                    y: r.y,
                    a: r.a,
                    status: status.clone(),
                    fit: fit.as_ref().map(|(_, f)| f.clone()),
                });
            }
            last = analysed;
        }
        let final_clf = &snaps.last().expect("final snapshot").1;
        let items: Vec<(ConfidenceManifold, LogisticFit)> = last
            .into_iter()
            .filter_map(|(_, f)| f)
            .filter(|(_, f)| !f.degenerate)
            .collect();
        art.figure(&format!("manifolds_{}", m.name), overlay(c, &m.name, &items)?)?;
        let empty_strata = histograms(c, &m.name, &records, art)?;
        let diagram = reliability_diagram(final_clf, &ev, c.reliability_bins, true)?;
        art.figure(
            &format!("reliability_{}", m.name),
            reliability_figure(&m.name, &diagram.overall, &diagram.strata),
        )?;
        summary.models.push(ModelSummary {
            name: m.name.clone(),
            checkpoints,
            reliability_max_deviation: diagram.overall.max_deviation(),
            empty_strata,
        });
    }
    art.write("fits.csv", fits_csv(&records))?;
    art.json("report.json", &summary)?;
    Ok(summary)
}

type Analysed = (String, Option<(ConfidenceManifold, LogisticFit)>);

/// Trajectory, manifold and fit for every evaluation sample.
fn analyse(
    c: &ManifoldsConfig,
    ev: &AttributedDataset,
    vae: &crate::nn::VaeModel,
    clf: &Classifier,
    epoch: usize,
) -> Result<Vec<Analysed>> {
    let runs = batch_xgems(c.execution, ev, &TargetPolicy::OtherClass, vae, clf, &c.xgem);
    let out = par::map(c.execution, &runs, |i, r| -> Result<Analysed> {
        let Ok(res) = r else {
            return Ok(("failed".into(), None));
        };
        let rec = &ev.records()[i];
        let meta = ManifoldMeta {
            sample_id: i,
            y: rec.y,
            a: rec.a,
            checkpoint: Some(epoch),
        };
        let m = confidence_manifold(&res.trajectory, clf, meta)?;
        let status = serde_json::to_value(res.trajectory.terminal_status)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        if m.len() < 4 {
            return Ok((status, None));
        }
        let f = fit_logistic(&m)?;
        Ok((status, Some((m, f))))
    });
    out.into_iter().collect()
}

fn overlay(c: &ManifoldsConfig, name: &str, items: &[(ConfidenceManifold, LogisticFit)]) -> Result<(String, String)> {
    let shown = &items[..items.len().min(c.plot_limit)];
    let aligned = shift_align(shown)?;
    let mut series = Vec::new();
    for (k, (m, (_, f))) in aligned.iter().zip(shown).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts = m.points();
        let (lo, hi) = pts.iter().fold((0.0f64, 0.0f64), |(l, h), p| (l.min(p.0), h.max(p.0)));
        let curve = (0..=50)
            .map(|j| lo + (hi - lo) * j as f64 / 50.0)
            .map(|x| (x, 1.0 - logistic(f.k, 0.0, x)))
            .collect();
        series.push(Series::new(format!("sample {}", m.meta.sample_id), pts, color, Mark::Points));
        series.push(Series::new(format!("fit {}", m.meta.sample_id), curve, color, Mark::Line));
    }
    let fig = Figure {
        title: format!("aligned confidence manifolds, {name}"),
        x_label: "distance from source reconstruction minus x0".into(),
        y_label: "source-class confidence".into(),
        series,
        x_range: None,
        y_range: Some((0.0, 1.0)),
    };
    Ok((fig.to_svg(), fig.to_csv()))
}

/// One heatmap per `(y, a)` stratum for the model's final checkpoint.
fn histograms(c: &ManifoldsConfig, name: &str, records: &[FitRecord], art: &mut Artifacts) -> Result<Vec<StratumKey>> {
    let last = c.classifier_train.epochs;
    let mut by_stratum: BTreeMap<StratumKey, Vec<LogisticFit>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.model == name && r.checkpoint == last) {
        if let Some(f) = &r.fit {
            by_stratum.entry((r.y, r.a)).or_default().push(f.clone());
        }
    }
    let mut empty = Vec::new();
    let mut fits = Vec::new();
    for (key, v) in by_stratum {
        if v.iter().all(|f| f.degenerate) {
            empty.push(key);
        } else {
            fits.extend(v.into_iter().map(|f| (key, f)));
        }
    }
    if fits.is_empty() {
        return Ok(empty);
    }
    let h = param_histogram2d(&fits, c.k_bins, c.x0_bins)?;
    for s in &h.strata {
        let a = s.a.map(|a| a.to_string()).unwrap_or_else(|| "none".into());
        art.figure(
            &format!("hist_{name}_y{}_a{a}", s.y),
            heatmap(
                &format!("{name}: y={} a={a}, {} degenerate", s.y, s.degenerate),
                "k",
                "x0",
                &h.k_edges,
                &h.x0_edges,
                &s.counts,
            ),
        )?;
    }
    Ok(empty)
}

fn reliability_figure(name: &str, overall: &Curve, strata: &[Curve]) -> (String, String) {
    let points = |c: &Curve| {
        c.bins
            .iter()
            .filter_map(|b| Some((b.mean_confidence?, b.accuracy?)))
            .collect::<Vec<_>>()
    };
    let mut series = vec![
        Series::new("identity", vec![(0.0, 0.0), (1.0, 1.0)], "#999999", Mark::Line),
        Series::new("all", points(overall), PALETTE[0], Mark::LinePoints),
    ];
    for (k, s) in strata.iter().enumerate() {
        let label = s.attribute.map(|a| format!("a={a}")).unwrap_or_else(|| "a=?".into());
        series.push(Series::new(label, points(s), PALETTE[1 + k % (PALETTE.len() - 1)], Mark::LinePoints));
    }
    let fig = Figure {
        title: format!("reliability, {name}"),
        x_label: "mean confidence".into(),
        y_label: "accuracy".into(),
        series,
        x_range: Some((0.0, 1.0)),
        y_range: Some((0.0, 1.0)),
    };
    (fig.to_svg(), fig.to_csv())
}

fn fits_csv(records: &[FitRecord]) -> String {
    let mut out = String::from("model,checkpoint,sample,y,a,status,k,x0,residual,degenerate\n");
    for r in records {
        let a = r.a.map(|a| a.to_string()).unwrap_or_default();
        let fit = r
            .fit
            .as_ref()
            .map(|f| format!("{},{},{},{}", f.k, f.x0, f.residual, f.degenerate))
            .unwrap_or_else(|| ",,,".into());
        out.push_str(&format!(
            "{},{},{},{},{a},{},{fit}\n",
            r.model, r.checkpoint, r.sample, r.y, r.status
        ));
    }
    out
}
