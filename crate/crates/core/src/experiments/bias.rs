//! Confounding audit: a classifier trained on unconfounded data against one
//! trained where the target label and the attribute always coincide.

use serde::{Deserialize, Serialize};

use super::{classifier_curve_csv, vae_curve_csv, Artifacts, SeedStream, Stage};
use crate::audit::{
    confounding_metric, overall_table_csv, recalibrate_equalized_odds, stratified_table_csv, ConfoundingReport,
    GroupRule, OracleRates, ProxyOracle, Stratum,
};
use crate::data::{gen_attributed, AttributedDataset, SyntheticAttrConfig};
use crate::error::{Error, Result};
use crate::nn::{
    quality_gate, train_classifier, train_vae, Activation, Head, MlpSpec, Optimizer, TrainConfig, VaeSpec,
};
use crate::par::Execution;
use crate::plot::{image_strip, Tile};
use crate::rng;
use crate::xgem::{batch_xgems, TargetPolicy, XGemConfig, XGemResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasAuditConfig {
    /// Image family; `n` and `seed` are set per split, `rho` applies to the
    /// unconfounded splits.
    pub images: SyntheticAttrConfig,
    pub train_n: usize,
    pub val_n: usize,
    pub eval_n: usize,
    /// Correlation of the confounded training split.
    pub rho_biased: f64,
    pub vae: VaeSpec,
    pub vae_train: TrainConfig,
    pub quality_threshold: f64,
    /// Architecture and schedule shared by both audited classifiers.
    pub classifier: MlpSpec,
    pub classifier_train: TrainConfig,
    /// Attribute classifier behind the proxy oracle.
    pub oracle: MlpSpec,
    pub oracle_train: TrainConfig,
    pub oracle_seed: u64,
    pub xgem: XGemConfig,
    /// Oracle accuracy floor.
    pub tau: f64,
    /// Flagging threshold on the confounding metric.
    pub delta: f64,
    /// Equalized-odds tolerance on FPR and FNR gaps.
    pub tol: f64,
    /// Samples shown in the exemplar gallery.
    pub gallery: usize,
    pub execution: Execution,
}

fn image_mlp(hidden: usize) -> MlpSpec {
    MlpSpec::new(256, &[hidden], Activation::Relu, 2, Head::Softmax)
}

fn schedule(epochs: usize, batch_size: usize, learning_rate: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        optimizer: Optimizer::default(),
        seed: 0,
    }
}

pub(crate) fn image_vae() -> VaeSpec {
    VaeSpec {
        data_dim: 256,
        latent_dim: 8,
        hidden: vec![128],
        activation: Activation::Relu,
        output_head: Head::Sigmoid,
        kl_weight: 1.0,
    }
}

impl Default for BiasAuditConfig {
    fn default() -> Self {
        Self {
            images: SyntheticAttrConfig::default(),
            train_n: 2000,
            val_n: 1000,
            eval_n: 200,
            rho_biased: 1.0,
            vae: image_vae(),
            vae_train: schedule(30, 64, 2e-3),
            quality_threshold: 1.0,
            classifier: image_mlp(32),
            classifier_train: schedule(10, 64, 1e-3),
            oracle: image_mlp(32),
            oracle_train: schedule(10, 64, 1e-3),
            oracle_seed: 0,
            xgem: XGemConfig {
                lambda: 5.0,
                eta: 0.05,
                max_iters: 300,
                ..XGemConfig::default()
            },
            tau: 0.95,
            delta: 0.25,
            tol: 0.005,
            gallery: 6,
            execution: Execution::default(),
        }
    }
}

impl BiasAuditConfig {
    pub(crate) fn reseed(&mut self, s: &SeedStream) {
        self.images.seed = s.get("images");
        self.vae_train.seed = s.get("vae");
        self.classifier_train.seed = s.get("classifier");
        self.oracle_train.seed = s.get("oracle_train");
        self.oracle_seed = s.get("oracle");
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.images.validate()?;
        self.vae.validate()?;
        self.vae_train.validate()?;
        self.classifier.validate()?;
        self.classifier_train.validate()?;
        self.oracle.validate()?;
        self.oracle_train.validate()?;
        self.xgem.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        let d = self.images.size * self.images.size;
        if self.vae.data_dim != d || self.classifier.input_dim() != d || self.oracle.input_dim() != d {
            return bad("model input widths must equal size * size");
        }
        if self.classifier.output_dim() != 2 || self.oracle.output_dim() != 2 {
            return bad("audited classifiers and the oracle are binary");
        }
        if self.train_n < 4 || self.val_n < 4 || self.eval_n < 4 {
            return bad("every split needs at least 4 samples");
        }
        if !(-1.0..=1.0).contains(&self.rho_biased) {
            return bad("rho_biased must lie in [-1, 1]");
        }
        if !(0.0..1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.delta) || !(self.tol >= 0.0) {
            return bad("need 0 <= tau < 1, 0 <= delta <= 1 and tol >= 0");
        }
        if !(self.quality_threshold > 0.0) {
            return bad("quality_threshold must be positive");
        }
        Ok(())
    }

    /// The four splits: unconfounded train, confounded train, shared
    /// validation, audit set.
    pub fn splits(&self) -> Result<[AttributedDataset; 4]> {
        let split = |k: u64, n: usize, rho: f64| {
            gen_attributed(&SyntheticAttrConfig {
                n,
                rho,
                seed: rng::derive(self.images.seed, k),
                ..self.images.clone()
            })
        };
        Ok([
            split(0, self.train_n, self.images.rho)?,
            split(1, self.train_n, self.rho_biased)?,
            split(2, self.val_n, self.images.rho)?,
            split(3, self.eval_n, self.images.rho)?,
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasAuditSummary {
    pub reconstruction_error: f64,
    /// Validation accuracy of the unconfounded and confounded classifiers.
    pub val_accuracy: [f64; 2],
    pub oracle_rules: Vec<GroupRule>,
    pub oracle_before: OracleRates,
    pub oracle_after: OracleRates,
    pub reports: Option<[ConfoundingReport; 2]>,
    /// Most affected `(y, a)` cell under the confounded classifier and the
    /// same cell under the unconfounded one.
    pub most_affected: Option<(Stratum, Option<Stratum>)>,
}

impl BiasAuditSummary {
    /// `metric(confounded) / metric(unconfounded)`; infinite when only the
    /// confounded classifier changes attributes.
    pub fn ratio(&self) -> Option<f64> {
        let [a, b] = self.reports.as_ref()?;
        Some(b.overall / a.overall)
    }
}

pub const NAMES: [&str; 2] = ["f1_rho0", "f2_rho1"];

pub fn run_bias_audit(c: &BiasAuditConfig, stage: Stage, art: &mut Artifacts) -> Result<BiasAuditSummary> {
    let [tr0, tr1, val, ev] = c.splits()?;
    let x0 = tr0.features()?;
    let (vae, vae_report) = train_vae(&x0, &c.vae, &c.vae_train)?;
    let reconstruction_error = quality_gate(&vae, &val.features()?, c.quality_threshold)?;
    let (f1, r1) = train_classifier(&x0, &tr0.labels(), &c.classifier, &c.classifier_train)?;
    let (f2, r2) = train_classifier(&tr1.features()?, &tr1.labels(), &c.classifier, &c.classifier_train)?;
    let (g, rg) = train_classifier(&x0, &tr0.attributes()?, &c.oracle, &c.oracle_train)?;
    let vx = val.features()?;
    let val_accuracy = [f1.accuracy(&vx, &val.labels())?, f2.accuracy(&vx, &val.labels())?];
    let rec = recalibrate_equalized_odds(&g, &val, c.tau, c.tol, c.oracle_seed)?;

    art.model("models/vae.ckpt", &vae)?;
    art.model(&format!("models/{}.ckpt", NAMES[0]), &f1)?;
    art.model(&format!("models/{}.ckpt", NAMES[1]), &f2)?;
    art.model("models/oracle_base.ckpt", &g)?;
    art.json("models/oracle_rules.json", &rec.oracle.rules())?;
    art.write("training/vae.csv", vae_curve_csv(&vae_report))?;
    art.write(&format!("training/{}.csv", NAMES[0]), classifier_curve_csv(&r1))?;
    art.write(&format!("training/{}.csv", NAMES[1]), classifier_curve_csv(&r2))?;
    art.write("training/oracle_base.csv", classifier_curve_csv(&rg))?;
    let cfg_json = serde_json::to_value(&c.images)?;
    for (name, ds) in [("train_rho0", &tr0), ("train_rho1", &tr1), ("val", &val), ("eval", &ev)] {
        art.dataset(&format!("data/{name}"), ds, cfg_json.clone(), Some(c.images.seed))?;
    }
    art.write("table_oracle.csv", oracle_table_csv(&rec.before, &rec.after))?;

    let mut summary = BiasAuditSummary {
        reconstruction_error,
        val_accuracy,
        oracle_rules: rec.oracle.rules().to_vec(),
        oracle_before: rec.before.clone(),
        oracle_after: rec.after.clone(),
        reports: None,
        most_affected: None,
    };
    if stage == Stage::Train {
        art.json("report.json", &summary)?;
        return Ok(summary);
    }

    let policy = TargetPolicy::OtherClass;
    let m1 = batch_xgems(c.execution, &ev, &policy, &vae, &f1, &c.xgem);
    let m2 = batch_xgems(c.execution, &ev, &policy, &vae, &f2, &c.xgem);
    let c1 = confounding_metric(&m1, &rec.oracle, &ev, c.delta)?;
    let c2 = confounding_metric(&m2, &rec.oracle, &ev, c.delta)?;
    let tables = [(NAMES[0], &c1), (NAMES[1], &c2)];
    art.write("table_overall.csv", overall_table_csv(&tables))?;
    art.write("table_stratified.csv", stratified_table_csv(&tables))?;
    art.write("exemplars.csv", exemplars_csv(&ev, [&m1, &m2], &rec.oracle)?)?;
    art.figure("gallery", gallery(c, &ev, [&m1, &m2], &rec.oracle)?)?;

    summary.most_affected = c2
        .most_affected()
        .map(|s| (s.clone(), s.y.zip(s.a).and_then(|(y, a)| c1.cell(y, a)).cloned()));
    summary.reports = Some([c1, c2]);
    art.json("report.json", &summary)?;
    Ok(summary)
}

fn oracle_table_csv(before: &OracleRates, after: &OracleRates) -> String {
    let mut out = String::from("stage,group_y,fpr,fnr,accuracy,negatives,positives\n");
    for (stage, rates) in [("before", before), ("after", after)] {
        for g in &rates.groups {
            out.push_str(&format!(
                "{stage},{},{},{},{},{},{}\n",
                g.y, g.fpr, g.fnr, g.accuracy, g.negatives, g.positives
            ));
        }
    }
    out
}

/// Attribute the oracle assigns to a switched exemplar.
fn exemplar_attribute(r: &Result<XGemResult>, oracle: &ProxyOracle) -> Result<Option<u8>> {
    match r {
        Ok(res) if res.trajectory.switch_index.is_some() => {
            Ok(Some(oracle.predict(&res.exemplar, res.trajectory.source.y_tar)?))
        }
        _ => Ok(None),
    }
}

fn status(r: &Result<XGemResult>) -> String {
    match r {
        Ok(res) => serde_json::to_value(res.trajectory.terminal_status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        Err(_) => "failed".into(),
    }
}

fn exemplars_csv(ev: &AttributedDataset, runs: [&Vec<Result<XGemResult>>; 2], oracle: &ProxyOracle) -> Result<String> {
    let mut out = String::from("sample,y,a");
    for n in NAMES {
        out.push_str(&format!(",{n}_status,{n}_switch_index,{n}_exemplar_attribute"));
    }
    out.push('\n');
    for (i, r) in ev.records().iter().enumerate() {
        out.push_str(&format!("{i},{},{}", r.y, r.a.map(|a| a.to_string()).unwrap_or_default()));
        for m in runs {
            let sw = m[i].as_ref().ok().and_then(|x| x.trajectory.switch_index);
            let attr = exemplar_attribute(&m[i], oracle)?;
            out.push_str(&format!(
                ",{},{},{}",
                status(&m[i]),
                sw.map(|v| v.to_string()).unwrap_or_default(),
                attr.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Source image followed by both exemplars; a bar marks exemplars whose
/// oracle attribute differs from the source attribute.
fn gallery(
    c: &BiasAuditConfig,
    ev: &AttributedDataset,
    runs: [&Vec<Result<XGemResult>>; 2],
    oracle: &ProxyOracle,
) -> Result<(String, String)> {
    let shape = [c.images.size, c.images.size];
    let mut tiles = Vec::new();
    let picks = (0..ev.len())
        .filter(|&i| runs.iter().all(|m| m[i].as_ref().is_ok_and(|r| r.trajectory.switch_index.is_some())))
        .take(c.gallery);
    for i in picks {
        let r = &ev.records()[i];
        tiles.push(Tile {
            pixels: r.x.data().to_vec(),
            shape,
            caption: format!("#{i} y={} a={}", r.y, r.a.unwrap_or(0)),
            highlight: false,
        });
        for (name, m) in NAMES.iter().zip(runs) {
            let res = m[i].as_ref().expect("filtered");
            let attr = exemplar_attribute(&m[i], oracle)?;
            tiles.push(Tile {
                pixels: res.exemplar.data().to_vec(),
                shape,
                caption: format!("{name} a={}", attr.unwrap_or(0)),
                highlight: attr != r.a,
            });
        }
    }
    Ok(image_strip("source | unconfounded | confounded", &tiles))
}
