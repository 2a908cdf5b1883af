//! End-to-end experiment runners driven by TOML configs.
//!
//! A config names one experiment kind and carries that kind's section.
//! Resolution fills every omitted field with its default and derives all
//! component seeds (datasets, initialization, batch order, oracle noise) from
//! the single global `seed`, so the resolved config written to
//! `manifest.json` describes the run completely. Re-running from that
//! manifest reproduces every artifact, which [`rerun`] checks by comparing
//! SHA-256 hashes of the CSV files.

mod artifacts;
mod bias;
mod manifolds;
mod mnist;
mod parabola;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use artifacts::{sha256_file, Artifacts};
pub use bias::{run_bias_audit, BiasAuditConfig, BiasAuditSummary};
pub use manifolds::{run_confidence_manifolds, ManifoldsConfig, ManifoldsSummary, ModelSummary};
pub use mnist::{run_mnist_xgem, MnistConfig, MnistSummary, PairOutcome};
pub use parabola::{run_parabola_fig1, train_parabola_models, PairReport, ParabolaFig1Config, ParabolaSummary};

use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ParabolaFig1,
    BiasAudit,
    ConfidenceManifolds,
    MnistXgem,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::ParabolaFig1 => "parabola_fig1",
            Self::BiasAudit => "bias_audit",
            Self::ConfidenceManifolds => "confidence_manifolds",
            Self::MnistXgem => "mnist_xgem",
        }
    }
}

/// Which part of an experiment to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Train and checkpoint the models, export the datasets.
    Train,
    /// Exemplar trajectories only (parabola).
    Xgem,
    /// PGD trajectories only (parabola).
    Attack,
    /// The whole experiment.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parabola_fig1: Option<ParabolaFig1Config>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_audit: Option<BiasAuditConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_manifolds: Option<ManifoldsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_xgem: Option<MnistConfig>,
}

impl ExperimentConfig {
    /// A config of `kind` with every section at its defaults.
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            out_dir: None,
            parabola_fig1: None,
            bias_audit: None,
            confidence_manifolds: None,
            mnist_xgem: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml_str(&text)
    }

    /// Fills the kind's section with defaults, derives component seeds from
    /// `seed` and validates. Resolving twice gives the same config.
    pub fn resolve(&self) -> Result<Self> {
        let mut out = Self::new(self.kind, self.seed);
        out.out_dir = self.out_dir.clone();
        let other = |present: bool, name: &str| {
            if present {
                Err(Error::InvalidConfig(format!(
                    "section [{name}] does not belong to a {} experiment",
                    self.kind.name()
                )))
            } else {
                Ok(())
            }
        };
        let k = self.kind;
        other(k != ExperimentKind::ParabolaFig1 && self.parabola_fig1.is_some(), "parabola_fig1")?;
        other(k != ExperimentKind::BiasAudit && self.bias_audit.is_some(), "bias_audit")?;
        other(
            k != ExperimentKind::ConfidenceManifolds && self.confidence_manifolds.is_some(),
            "confidence_manifolds",
        )?;
        other(k != ExperimentKind::MnistXgem && self.mnist_xgem.is_some(), "mnist_xgem")?;
        let seeds = SeedStream(self.seed);
        match k {
            ExperimentKind::ParabolaFig1 => {
                let mut c = self.parabola_fig1.clone().unwrap_or_default();
                c.reseed(&seeds);
                c.validate()?;
                out.parabola_fig1 = Some(c);
            }
            ExperimentKind::BiasAudit => {
                let mut c = self.bias_audit.clone().unwrap_or_default();
                c.reseed(&seeds);
                c.validate()?;
                out.bias_audit = Some(c);
            }
            ExperimentKind::ConfidenceManifolds => {
                let mut c = self.confidence_manifolds.clone().unwrap_or_default();
                c.reseed(&seeds);
                c.validate()?;
                out.confidence_manifolds = Some(c);
            }
            ExperimentKind::MnistXgem => {
                let mut c = self.mnist_xgem.clone().unwrap_or_default();
                c.reseed(&seeds);
                c.validate()?;
                out.mnist_xgem = Some(c);
            }
        }
        Ok(out)
    }

    /// `out_dir` from the config, else `runs/<kind>`.
    pub fn output_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(self.kind.name()))
    }
}

/// Named sub-seeds of the global seed.
pub(crate) struct SeedStream(u64);

impl SeedStream {
    /// Kept to 63 bits so resolved configs stay representable in TOML.
    pub(crate) fn get(&self, name: &str) -> u64 {
        let tag = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        rng::derive(self.0, tag) >> 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Required inputs were unavailable; nothing was computed.
    Skipped { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub stage: Stage,
    pub seed: u64,
    /// Fully resolved config.
    pub config: ExperimentConfig,
    pub status: RunStatus,
    /// Relative path to lowercase hex SHA-256, for every file written.
    pub artifacts: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Artifacts ending in `.csv`.
    pub fn csv_artifacts(&self) -> impl Iterator<Item = (&String, &String)> {
        self.artifacts.iter().filter(|(p, _)| p.ends_with(".csv"))
    }
}

/// Result of one experiment run: summary as JSON plus the manifest on disk.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub dir: PathBuf,
}

fn check_output_dir(dir: &Path, kind: ExperimentKind) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    if path.exists() {
        let previous = RunManifest::load(&path)
            .map_err(|e| Error::InvalidConfig(format!("{} holds an unreadable manifest: {e}", dir.display())))?;
        if previous.config.kind != kind {
            return Err(Error::InvalidConfig(format!(
                "{} belongs to a {} run; refusing to overwrite it with {}",
                dir.display(),
                previous.config.kind.name(),
                kind.name()
            )));
        }
    }
    Ok(())
}

/// Resolves `cfg`, runs `stage` into `out` (or the configured directory) and
/// writes the manifest.
pub fn run(cfg: &ExperimentConfig, stage: Stage, out: Option<&Path>) -> Result<RunOutcome> {
    let mut cfg = cfg.resolve()?;
    if let Some(out) = out {
        cfg.out_dir = Some(out.to_path_buf());
    }
    let dir = cfg.output_dir();
    if matches!(stage, Stage::Xgem | Stage::Attack) && cfg.kind != ExperimentKind::ParabolaFig1 {
        return Err(Error::InvalidConfig(format!(
            "the {stage:?} stage needs a parabola_fig1 config, got {}",
            cfg.kind.name()
        )));
    }
    check_output_dir(&dir, cfg.kind)?;
    let mut art = Artifacts::create(&dir)?;
    let (status, summary) = match cfg.kind {
        ExperimentKind::ParabolaFig1 => {
            let c = cfg.parabola_fig1.as_ref().expect("resolved");
            let s = run_parabola_fig1(c, stage, &mut art)?;
            (RunStatus::Completed, serde_json::to_value(s)?)
        }
        ExperimentKind::BiasAudit => {
            let c = cfg.bias_audit.as_ref().expect("resolved");
            let s = run_bias_audit(c, stage, &mut art)?;
            (RunStatus::Completed, serde_json::to_value(s)?)
        }
        ExperimentKind::ConfidenceManifolds => {
            let c = cfg.confidence_manifolds.as_ref().expect("resolved");
            let s = run_confidence_manifolds(c, stage, &mut art)?;
            (RunStatus::Completed, serde_json::to_value(s)?)
        }
        ExperimentKind::MnistXgem => {
            let c = cfg.mnist_xgem.as_ref().expect("resolved");
            match run_mnist_xgem(c, stage, &mut art)? {
                Some(s) => (RunStatus::Completed, serde_json::to_value(s)?),
                None => (
                    RunStatus::Skipped {
                        reason: format!(
                            "MNIST IDX files not found (set data_dir or {})",
                            mnist::MNIST_DIR_ENV
                        ),
                    },
                    serde_json::Value::Null,
                ),
            }
        }
    };
    let manifest = RunManifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        stage,
        seed: cfg.seed,
        config: cfg,
        status,
        artifacts: art.into_hashes(),
        summary,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunOutcome { manifest, dir })
}

/// CSV artifacts whose hashes differ between two manifests, including files
/// present in only one of them.
pub fn csv_differences(expected: &RunManifest, actual: &RunManifest) -> Vec<String> {
    let a: BTreeMap<_, _> = expected.csv_artifacts().collect();
    let b: BTreeMap<_, _> = actual.csv_artifacts().collect();
    let mut diff: Vec<String> = a
        .iter()
        .filter(|(p, h)| b.get(*p) != Some(*h))
        .map(|(p, _)| (*p).clone())
        .collect();
    diff.extend(b.keys().filter(|p| !a.contains_key(*p)).map(|p| (*p).clone()));
    diff
}

/// Re-runs the experiment recorded in `manifest_path` into `out` and lists
/// the CSV artifacts that did not reproduce bitwise.
pub fn rerun(manifest_path: impl AsRef<Path>, out: &Path) -> Result<(RunOutcome, Vec<String>)> {
    let recorded = RunManifest::load(manifest_path)?;
    let outcome = run(&recorded.config, recorded.stage, Some(out))?;
    let diff = csv_differences(&recorded, &outcome.manifest);
    Ok((outcome, diff))
}

/// Writes a training curve as `epoch,loss,accuracy` rows.
pub(crate) fn classifier_curve_csv(report: &crate::nn::TrainReport) -> String {
    let mut out = String::from("epoch,loss,accuracy\n");
    for e in &report.epochs {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.accuracy));
    }
    out
}

pub(crate) fn vae_curve_csv(report: &crate::nn::VaeReport) -> String {
    let mut out = String::from("epoch,reconstruction,kl,elbo\n");
    for e in &report.epochs {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.reconstruction, e.kl, e.elbo));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_is_idempotent_and_seeded() {
        let cfg = ExperimentConfig::from_toml_str("kind = \"parabola_fig1\"\nseed = 11\n").unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.resolve().unwrap(), r);
        let other = ExperimentConfig::new(ExperimentKind::ParabolaFig1, 12).resolve().unwrap();
        assert_ne!(
            r.parabola_fig1.as_ref().unwrap().data.seed,
            other.parabola_fig1.as_ref().unwrap().data.seed
        );
        let text = toml::to_string(&r).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), r);
    }

    #[test]
    fn foreign_sections_and_unknown_keys_are_rejected() {
        let bad = "kind = \"bias_audit\"\n[parabola_fig1]\nsamples = 3\n";
        assert!(matches!(
            ExperimentConfig::from_toml_str(bad).unwrap().resolve(),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("kind = \"bias_audit\"\nsed = 3\n"),
            Err(Error::Toml(_))
        ));
        assert!(ExperimentConfig::from_toml_str("kind = \"nope\"\n").is_err());
    }

    #[test]
    fn seed_streams_are_distinct() {
        let s = SeedStream(5);
        assert_ne!(s.get("data"), s.get("vae"));
        assert_eq!(s.get("data"), SeedStream(5).get("data"));
    }
}
