//! Exemplars versus PGD criticisms on the parabola.

use serde::{Deserialize, Serialize};

use super::{classifier_curve_csv, vae_curve_csv, Artifacts, SeedStream, Stage};
use crate::adversarial::{pgd_attack, AttackConfig, AttackResult};
use crate::data::{gen_parabola, parabola_distance, AttributedDataset, ParabolaConfig};
use crate::error::Result;
use crate::export::{attack_csv, attack_sidecar, xgem_csv, xgem_sidecar};
use crate::nn::{
    quality_gate, train_classifier, train_vae, Activation, Classifier, Head, MlpSpec, Optimizer, TrainConfig,
    TrainReport, VaeModel, VaeReport, VaeSpec,
};
use crate::par::{self, Execution};
use crate::plot::{Figure, Mark, Series};
use crate::xgem::{find_xgem, TerminalStatus, XGemConfig, XGemResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParabolaFig1Config {
    pub data: ParabolaConfig,
    pub vae: VaeSpec,
    pub vae_train: TrainConfig,
    pub classifier: MlpSpec,
    pub classifier_train: TrainConfig,
    /// Mean squared reconstruction error the generator must stay below.
    pub quality_threshold: f64,
    pub xgem: XGemConfig,
    pub attack: AttackConfig,
    /// Number of paired runs; sources are spread evenly over the dataset.
    pub samples: usize,
    pub execution: Execution,
}

impl Default for ParabolaFig1Config {
    fn default() -> Self {
        Self {
            data: ParabolaConfig::default(),
            vae: VaeSpec {
                data_dim: 2,
                latent_dim: 1,
                hidden: vec![32, 32],
                activation: Activation::Tanh,
                output_head: Head::Linear,
                kl_weight: 0.01,
            },
            vae_train: TrainConfig {
                epochs: 150,
                batch_size: 32,
                learning_rate: 3e-3,
                optimizer: Optimizer::default(),
                seed: 0,
            },
            classifier: MlpSpec::new(2, &[16], Activation::Tanh, 2, Head::Softmax),
            classifier_train: TrainConfig {
                epochs: 60,
                batch_size: 32,
                learning_rate: 1e-2,
                optimizer: Optimizer::default(),
                seed: 0,
            },
            quality_threshold: 0.05,
            xgem: XGemConfig {
                lambda: 0.5,
                eta: 0.01,
                max_iters: 3000,
                ..XGemConfig::default()
            },
            attack: AttackConfig {
                epsilon: 0.5,
                steps: 20,
                step_size: 0.1,
            },
            samples: 30,
            execution: Execution::default(),
        }
    }
}

impl ParabolaFig1Config {
    pub(crate) fn reseed(&mut self, s: &SeedStream) {
        self.data.seed = s.get("data");
        self.vae_train.seed = s.get("vae");
        self.classifier_train.seed = s.get("classifier");
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.vae.validate()?;
        self.vae_train.validate()?;
        self.classifier.validate()?;
        self.classifier_train.validate()?;
        self.xgem.validate()?;
        self.attack.validate()?;
        let bad = |m: &str| Err(crate::Error::InvalidConfig(m.into()));
        if self.vae.data_dim != 2 || self.classifier.input_dim() != 2 || self.classifier.output_dim() != 2 {
            return bad("parabola models need 2-d inputs and two classes");
        }
        if self.samples > self.data.n {
            return bad("samples exceeds the dataset size");
        }
        if !(self.quality_threshold > 0.0) {
            return bad("quality_threshold must be positive");
        }
        Ok(())
    }

    /// Indices of the paired-run sources.
    pub fn sample_indices(&self) -> Vec<usize> {
        (0..self.samples).map(|i| i * self.data.n / self.samples).collect()
    }
}

/// Trained models plus their training reports.
pub struct ParabolaModels {
    pub data: AttributedDataset,
    pub vae: VaeModel,
    pub vae_report: VaeReport,
    pub classifier: Classifier,
    pub classifier_report: TrainReport,
    pub reconstruction_error: f64,
}

/// Generates the data, trains both models and applies the generator gate.
pub fn train_parabola_models(c: &ParabolaFig1Config) -> Result<ParabolaModels> {
    let data = gen_parabola(&c.data)?;
    let x = data.features()?;
    let (vae, vae_report) = train_vae(&x, &c.vae, &c.vae_train)?;
    let reconstruction_error = quality_gate(&vae, &x, c.quality_threshold)?;
    let (classifier, classifier_report) = train_classifier(&x, &data.labels(), &c.classifier, &c.classifier_train)?;
    Ok(ParabolaModels {
        data,
        vae,
        vae_report,
        classifier,
        classifier_report,
        reconstruction_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub sample: usize,
    pub t: f64,
    pub y: usize,
    pub xgem_status: Option<TerminalStatus>,
    pub xgem_switch_index: Option<usize>,
    /// Largest distance of any trajectory reconstruction from the parabola.
    pub xgem_max_distance: Option<f64>,
    pub pgd_endpoint_distance: Option<f64>,
    pub pgd_max_distance: Option<f64>,
    pub pgd_label_flipped: Option<bool>,
}

impl PairReport {
    /// The PGD endpoint sits farther from the parabola than every point of
    /// the exemplar trajectory.
    pub fn pgd_farther(&self) -> Option<bool> {
        Some(self.pgd_endpoint_distance? > self.xgem_max_distance?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolaSummary {
    pub reconstruction_error: f64,
    pub classifier_accuracy: f64,
    pub pairs: Vec<PairReport>,
    pub xgem_switched: usize,
    pub xgem_max_distance: Option<f64>,
    pub pgd_max_endpoint_distance: Option<f64>,
    /// Fraction of complete pairs where the PGD endpoint is farther.
    pub pgd_farther_fraction: Option<f64>,
}

fn manifold_distance(points: impl Iterator<Item = [f64; 2]>) -> f64 {
    points.map(|p| parabola_distance(p).0).fold(0.0, f64::max)
}

fn xy(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

pub fn run_parabola_fig1(c: &ParabolaFig1Config, stage: Stage, art: &mut Artifacts) -> Result<ParabolaSummary> {
    let m = train_parabola_models(c)?;
    let x = m.data.features()?;
    let accuracy = m.classifier.accuracy(&x, &m.data.labels())?;
    art.model("models/vae.ckpt", &m.vae)?;
    art.model("models/classifier.ckpt", &m.classifier)?;
    art.write("training/vae.csv", vae_curve_csv(&m.vae_report))?;
    art.write("training/classifier.csv", classifier_curve_csv(&m.classifier_report))?;
    art.dataset("data", &m.data, serde_json::to_value(&c.data)?, Some(c.data.seed))?;

    let idx = c.sample_indices();
    let sources: Vec<_> = idx.iter().map(|&i| m.data.records()[i].clone()).collect();
    let want_xgem = matches!(stage, Stage::Xgem | Stage::Full);
    let want_pgd = matches!(stage, Stage::Attack | Stage::Full);
    let xgems: Vec<Option<XGemResult>> = if want_xgem {
        par::map(c.execution, &sources, |_, r| find_xgem(&r.x, r.y, 1 - r.y, &m.vae, &m.classifier, &c.xgem))
            .into_iter()
            .map(|r| r.map(Some))
            .collect::<Result<_>>()?
    } else {
        vec![None; sources.len()]
    };
    let attacks: Vec<Option<AttackResult>> = if want_pgd {
        par::map(c.execution, &sources, |_, r| pgd_attack(&r.x, r.y, &m.classifier, &c.attack))
            .into_iter()
            .map(|r| r.map(Some))
            .collect::<Result<_>>()?
    } else {
        vec![None; sources.len()]
    };

    let mut pairs = Vec::with_capacity(sources.len());
    for (k, ((&i, r), (xg, pgd))) in idx.iter().zip(&sources).zip(xgems.iter().zip(&attacks)).enumerate() {
        if let Some(res) = xg {
            art.write(&format!("trajectories/xgem_{k:03}.csv"), xgem_csv(res))?;
            art.write(&format!("trajectories/xgem_{k:03}.json"), xgem_sidecar(&c.xgem, res)?)?;
        }
        if let Some(res) = pgd {
            art.write(&format!("trajectories/pgd_{k:03}.csv"), attack_csv(res))?;
            art.write(&format!("trajectories/pgd_{k:03}.json"), attack_sidecar(&c.attack, res)?)?;
        }
        pairs.push(PairReport {
            sample: i,
            t: r.x.data()[0],
            y: r.y,
            xgem_status: xg.as_ref().map(|g| g.trajectory.terminal_status),
            xgem_switch_index: xg.as_ref().and_then(|g| g.trajectory.switch_index),
            xgem_max_distance: xg
                .as_ref()
                .map(|g| manifold_distance(g.trajectory.steps.iter().map(|s| xy(s.x.data())))),
            pgd_endpoint_distance: pgd.as_ref().map(|a| parabola_distance(xy(a.adversarial.data())).0),
            pgd_max_distance: pgd.as_ref().map(|a| manifold_distance(a.steps.iter().map(|s| xy(s.x.data())))),
            pgd_label_flipped: pgd
                .as_ref()
                .map(|a| a.steps.last().is_some_and(|s| s.proba.argmax() != r.y)),
        });
    }

    if stage != Stage::Train {
        art.write("pairs.csv", pairs_csv(&pairs))?;
        art.figure("fig1", figure(c, &m.data, &xgems, &attacks))?;
    }
    let complete: Vec<bool> = pairs.iter().filter_map(PairReport::pgd_farther).collect();
    let max_of = |v: Vec<f64>| v.into_iter().reduce(f64::max);
    let summary = ParabolaSummary {
        reconstruction_error: m.reconstruction_error,
        classifier_accuracy: accuracy,
        xgem_switched: pairs.iter().filter(|p| p.xgem_status.is_some_and(|s| s.switched())).count(),
        xgem_max_distance: max_of(pairs.iter().filter_map(|p| p.xgem_max_distance).collect()),
        pgd_max_endpoint_distance: max_of(pairs.iter().filter_map(|p| p.pgd_endpoint_distance).collect()),
        pgd_farther_fraction: (!complete.is_empty())
            .then(|| complete.iter().filter(|&&b| b).count() as f64 / complete.len() as f64),
        pairs,
    };
    art.json("report.json", &summary)?;
    Ok(summary)
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn pairs_csv(pairs: &[PairReport]) -> String {
    let mut out = String::from(
        "pair,sample,t,y,xgem_status,xgem_switch_index,xgem_max_distance,pgd_endpoint_distance,pgd_max_distance,pgd_label_flipped,pgd_farther\n",
    );
    for (k, p) in pairs.iter().enumerate() {
        let status = p.xgem_status.map(|s| serde_json::to_value(s).expect("enum").as_str().unwrap_or("").to_string());
        out.push_str(&format!(
            "{k},{},{},{},{},{},{},{},{},{},{}\n",
            p.sample,
            p.t,
            p.y,
            status.unwrap_or_default(),
            opt(p.xgem_switch_index),
            opt(p.xgem_max_distance),
            opt(p.pgd_endpoint_distance),
            opt(p.pgd_max_distance),
            opt(p.pgd_label_flipped),
            opt(p.pgd_farther())
        ));
    }
    out
}

fn figure(
    c: &ParabolaFig1Config,
    data: &AttributedDataset,
    xgems: &[Option<XGemResult>],
    attacks: &[Option<AttackResult>],
) -> (String, String) {
    let (lo, hi) = (c.data.t_min, c.data.t_max);
    let curve: Vec<(f64, f64)> = (0..=200)
        .map(|i| lo + (hi - lo) * i as f64 / 200.0)
        .map(|t| (t, t * t))
        .collect();
    let mut series = vec![Series::new("manifold", curve, "#1f77b4", Mark::Line)];
    let stride = (data.len() / 200).max(1);
    for (label, color) in [(0usize, "#d62728"), (1, "#2ca02c")] {
        let pts = data
            .records()
            .iter()
            .step_by(stride)
            .filter(|r| r.y == label)
            .map(|r| (r.x.data()[0], r.x.data()[1]))
            .collect();
        series.push(Series::new(format!("class {label}"), pts, color, Mark::Points));
    }
    for (k, g) in xgems.iter().enumerate() {
        if let Some(g) = g {
            let pts = g.trajectory.steps.iter().map(|s| (s.x.data()[0], s.x.data()[1])).collect();
            series.push(Series::new(format!("xgem {k}"), pts, "#000000", Mark::Line));
        }
    }
    for (k, a) in attacks.iter().enumerate() {
        if let Some(a) = a {
            let pts = a.steps.iter().map(|s| (s.x.data()[0], s.x.data()[1])).collect();
            series.push(Series::new(format!("pgd {k}"), pts, "#ff00ff", Mark::LinePoints));
        }
    }
    let fig = Figure {
        title: "xGEMs versus PGD criticisms".into(),
        x_label: "x1".into(),
        y_label: "x2".into(),
        series,
        x_range: None,
        y_range: None,
    };
    (fig.to_svg(), fig.to_csv())
}
