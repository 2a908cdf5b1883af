//! `xgems`: runs the experiments from TOML configs.
//!
//! Exit codes: 0 success (including a skipped MNIST run), 1 configuration
//! error, 2 runtime or numeric error, 3 quality-gate failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xgems_core::experiments::{self, ExperimentConfig, ExperimentKind, RunOutcome, RunStatus, Stage};
use xgems_core::Error;

#[derive(Parser)]
#[command(name = "xgems", version, about = "Manifold guided exemplars for probing black-box classifiers")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Verbs tied to one experiment fall back to
    /// its defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Verb {
    /// Train and checkpoint the models of any experiment.
    Train(Common),
    /// Parabola exemplar trajectories.
    Xgem(Common),
    /// Parabola PGD trajectories.
    Attack(Common),
    /// Confounding audit of an unconfounded and a confounded classifier.
    Audit(Common),
    /// Confidence manifolds, logistic fits, histograms, reliability diagrams.
    Manifolds(Common),
    /// MNIST exemplar gallery; skipped when the IDX files are absent.
    Mnist(Common),
    /// Run a whole experiment, or re-run one from its manifest and check
    /// that every CSV reproduces bitwise.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
}

const AUDIT_NAMES: [&str; 2] = ["unconfounded (rho=0)", "confounded (rho=1)"];

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::Toml(_) | Error::MissingFile(_) | Error::SameLabel(_) => 1,
        Error::QualityGate { .. } | Error::AccuracyBelowTau { .. } => 3,
        _ => 2,
    }
}

fn load(common: &Common, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&common.config, kind) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(kind)) => ExperimentConfig::new(kind, 0),
        (None, None) => return Err(Error::InvalidConfig("--config is required for this verb".into())),
    };
    if let Some(k) = kind {
        if cfg.kind != k {
            return Err(Error::InvalidConfig(format!(
                "this verb runs {} experiments, the config is {}",
                k.name(),
                cfg.kind.name()
            )));
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_outcome(o: &RunOutcome) {
    let m = &o.manifest;
    if let RunStatus::Skipped { reason } = &m.status {
        eprintln!("skipped: {reason}");
        return;
    }
    println!(
        "{} ({:?}, seed {}): {} artifacts in {}",
        m.config.kind.name(),
        m.stage,
        m.seed,
        m.artifacts.len(),
        o.dir.display()
    );
    let s = &m.summary;
    match m.config.kind {
        ExperimentKind::ParabolaFig1 => {
            println!("  reconstruction error   {}", s["reconstruction_error"]);
            println!("  xgem switched          {}", s["xgem_switched"]);
            println!("  xgem max off-manifold  {}", s["xgem_max_distance"]);
            println!("  pgd max off-manifold   {}", s["pgd_max_endpoint_distance"]);
            println!("  pgd farther fraction   {}", s["pgd_farther_fraction"]);
        }
        ExperimentKind::BiasAudit => {
            println!("  oracle accuracy        {}", s["oracle_after"]["accuracy"]);
            println!(
                "  oracle FPR/FNR gaps    {} / {}",
                s["oracle_after"]["fpr_gap"], s["oracle_after"]["fnr_gap"]
            );
            if let Some(r) = s["reports"].as_array() {
                for (name, rep) in AUDIT_NAMES.iter().zip(r) {
                    println!(
                        "  {name:<22} {} (flagged {})",
                        rep["overall"], rep["flagged"]
                    );
                }
            }
        }
        ExperimentKind::ConfidenceManifolds => {
            if let Some(models) = s["models"].as_array() {
                for mdl in models {
                    let last = mdl["checkpoints"].as_array().and_then(|c| c.last().cloned()).unwrap_or_default();
                    println!(
                        "  {:<22} mean k {} mean x0 {} reliability dev {}",
                        mdl["name"].as_str().unwrap_or(""),
                        last["mean_k"],
                        last["mean_x0"],
                        mdl["reliability_max_deviation"]
                    );
                }
            }
        }
        ExperimentKind::MnistXgem => {
            println!(
                "  successful pairs       {} of {}",
                s["successes"],
                s["pairs"].as_array().map_or(0, Vec::len)
            );
        }
    }
}

fn execute(verb: Verb) -> Result<(), Error> {
    let (common, kind, stage) = match verb {
        Verb::Train(c) => (c, None, Stage::Train),
        Verb::Xgem(c) => (c, Some(ExperimentKind::ParabolaFig1), Stage::Xgem),
        Verb::Attack(c) => (c, Some(ExperimentKind::ParabolaFig1), Stage::Attack),
        Verb::Audit(c) => (c, Some(ExperimentKind::BiasAudit), Stage::Full),
        Verb::Manifolds(c) => (c, Some(ExperimentKind::ConfidenceManifolds), Stage::Full),
        Verb::Mnist(c) => (c, Some(ExperimentKind::MnistXgem), Stage::Full),
        Verb::Report {
            common,
            manifest: Some(path),
        } => {
            let recorded = experiments::RunManifest::load(&path)?;
            let out = common
                .out
                .clone()
                .unwrap_or_else(|| recorded.config.output_dir().with_extension("rerun"));
            let (outcome, diff) = experiments::rerun(&path, &out)?;
            print_outcome(&outcome);
            if diff.is_empty() {
                println!("all {} CSV artifacts reproduced bitwise", recorded.csv_artifacts().count());
                return Ok(());
            }
            for d in &diff {
                eprintln!("differs: {d}");
            }
            return Err(Error::NotReproduced(diff.len()));
        }
        Verb::Report { common, manifest: None } => (common, None, Stage::Full),
    };
    let cfg = load(&common, kind)?;
    let outcome = experiments::run(&cfg, stage, common.out.as_deref())?;
    print_outcome(&outcome);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
