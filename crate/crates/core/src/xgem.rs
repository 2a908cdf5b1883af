//! Manifold guided exemplars: gradient traversal in the latent space of a
//! generator until a black-box classifier switches to a target label.
//!
//! The minimised objective is
//!
//! ```text
//! J(z) = || G(z) - x* ||^2 + lambda * CE(f(G(z)), y_tar)
//! ```
//!
//! starting from `z0 = encode(x*)`. Every visited latent point, its
//! reconstruction, the classifier output and `J` are recorded.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::AttributedDataset;
use crate::error::{Error, Result};
use crate::nd::{Graph, LossKind, Target, Tensor};
use crate::nn::{BlackBox, Generator};
use crate::par::{self, Execution};

/// Maximum number of step halvings tried per iteration when backtracking.
pub const MAX_HALVINGS: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultMode {
    #[default]
    SwitchPoint,
    Converged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    SwitchedAndConverged,
    SwitchedOnly,
    MaxItersReached,
    NoSwitch,
}

impl TerminalStatus {
    pub fn switched(self) -> bool {
        matches!(self, Self::SwitchedAndConverged | Self::SwitchedOnly)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XGemConfig {
    /// Weight of the classification term.
    pub lambda: f64,
    /// Initial step size.
    pub eta: f64,
    pub max_iters: usize,
    #[serde(default = "default_switch_confidence")]
    pub switch_confidence: f64,
    /// Stop once a step lowers the objective by less than this.
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
    #[serde(default)]
    pub result_mode: ResultMode,
    /// Halve the step until the objective decreases; when off, every step
    /// uses `eta` unchanged.
    #[serde(default = "default_backtracking")]
    pub backtracking: bool,
}

fn default_switch_confidence() -> f64 {
    0.5
}
fn default_tol() -> f64 {
    1e-9
}
fn default_backtracking() -> bool {
    true
}

impl Default for XGemConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            eta: 0.1,
            max_iters: 500,
            switch_confidence: default_switch_confidence(),
            convergence_tol: default_tol(),
            result_mode: ResultMode::default(),
            backtracking: default_backtracking(),
        }
    }
}

impl XGemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be finite and >= 0".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig("eta must be finite and > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if !(0.5..1.0).contains(&self.switch_confidence) {
            return Err(Error::InvalidConfig("switch_confidence must lie in [0.5, 1)".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::InvalidConfig("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub iter: usize,
    pub z: Tensor,
    /// Reconstruction `G(z)`.
    pub x: Tensor,
    pub proba: Tensor,
    pub objective: f64,
    /// Data-space distance to the step-0 reconstruction.
    pub distance_from_origin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub x: Tensor,
    pub y: usize,
    pub y_tar: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XGemTrajectory {
    pub steps: Vec<Step>,
    pub switch_index: Option<usize>,
    pub source: Source,
    pub terminal_status: TerminalStatus,
}

impl XGemTrajectory {
    /// Probability of class `c` at every step.
    pub fn confidences(&self, c: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s.proba.data()[c]).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.distance_from_origin).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XGemResult {
    pub exemplar: Tensor,
    pub exemplar_latent: Tensor,
    pub trajectory: XGemTrajectory,
}

struct Eval {
    x: Tensor,
    proba: Tensor,
    objective: f64,
    grad: Vec<f64>,
}

struct Problem<'a, G: ?Sized, B: ?Sized> {
    gen: &'a G,
    clf: &'a B,
    anchor: Tensor,
    y_tar: usize,
    lambda: f64,
}

impl<G: Generator + ?Sized, B: BlackBox + ?Sized> Problem<'_, G, B> {
    fn eval(&self, z: &Tensor) -> Result<Eval> {
        let mut g = Graph::new();
        let zv = g.input(z.as_row_matrix()?);
        let x = self.gen.decode_on(&mut g, zv)?;
        let rec = g.loss(LossKind::SquaredError, x, Target::Dense(self.anchor.clone()))?;
        let logits = self.clf.logits_on(&mut g, x)?;
        let ce = g.loss(LossKind::SoftmaxCrossEntropy, logits, Target::Classes(vec![self.y_tar]))?;
        let weighted = g.scale(ce, self.lambda)?;
        let obj = g.add(rec, weighted)?;
        let proba = g.softmax(logits)?;
        let grads = g.backward(obj)?;
        Ok(Eval {
            x: g.value(x).reshape(&[self.gen.data_dim()])?,
            proba: g.value(proba).reshape(&[self.clf.num_classes()])?,
            objective: g.value(obj).item().expect("scalar"),
            grad: grads.wrt(zv).into_data(),
        })
    }
}

fn is_switched(proba: &Tensor, y_tar: usize, threshold: f64) -> bool {
    proba.argmax() == y_tar && proba.data()[y_tar] >= threshold
}

fn step_from(z: &[f64], dir: &[f64], eta: f64) -> Result<Tensor> {
    Tensor::vector(z.iter().zip(dir).map(|(a, g)| a - eta * g).collect())
}

/// Runs the latent traversal for one source point.
pub fn find_xgem<G, B>(x_star: &Tensor, y_star: usize, y_tar: usize, gen: &G, clf: &B, cfg: &XGemConfig) -> Result<XGemResult>
where
    G: Generator + ?Sized,
    B: BlackBox + ?Sized,
{
    cfg.validate()?;
    if y_tar == y_star {
        return Err(Error::SameLabel(y_tar));
    }
    for c in [y_star, y_tar] {
        if c >= clf.num_classes() {
            return Err(Error::InvalidClass {
                index: c,
                classes: clf.num_classes(),
            });
        }
    }
    if x_star.shape() != [gen.data_dim()] || clf.input_dim() != gen.data_dim() {
        return Err(Error::ShapeMismatch {
            op: "find_xgem",
            lhs: x_star.shape().to_vec(),
            rhs: vec![gen.data_dim(), clf.input_dim()],
        });
    }
    let problem = Problem {
        gen,
        clf,
        anchor: x_star.as_row_matrix()?,
        y_tar,
        lambda: cfg.lambda,
    };
    let non_finite = |iteration: usize| {
        move |e: Error| match e {
            Error::NonFinite(_) | Error::NonPositive { .. } => Error::NonFiniteObjective { iteration },
            other => other,
        }
    };

    let mut z = gen.encode(x_star)?;
    let mut cur = problem.eval(&z).map_err(non_finite(0))?;
    let origin = cur.x.clone();
    let mut steps = vec![Step {
        iter: 0,
        z: z.clone(),
        x: cur.x.clone(),
        proba: cur.proba.clone(),
        objective: cur.objective,
        distance_from_origin: 0.0,
    }];
    let mut switch_index = is_switched(&cur.proba, y_tar, cfg.switch_confidence).then_some(0);
    let mut status = TerminalStatus::MaxItersReached;

    for iter in 1..=cfg.max_iters {
        let next = if cfg.backtracking {
            let mut eta = cfg.eta;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let cand = step_from(z.data(), &cur.grad, eta);
                if let Ok(cz) = cand {
                    if let Ok(ev) = problem.eval(&cz) {
                        if ev.objective < cur.objective {
                            accepted = Some((cz, ev));
                            break;
                        }
                    }
                }
                eta *= 0.5;
            }
            accepted
        } else {
            let cz = step_from(z.data(), &cur.grad, cfg.eta).map_err(non_finite(iter))?;
            let ev = problem.eval(&cz).map_err(non_finite(iter))?;
            Some((cz, ev))
        };
        let Some((nz, ev)) = next else {
            // No decrease within the halving budget: a stationary point.
            status = if switch_index.is_some() {
                TerminalStatus::SwitchedAndConverged
            } else {
                TerminalStatus::NoSwitch
            };
            break;
        };
        let decrease = cur.objective - ev.objective;
        steps.push(Step {
            iter,
            z: nz.clone(),
            x: ev.x.clone(),
            proba: ev.proba.clone(),
            objective: ev.objective,
            distance_from_origin: ev.x.l2_distance(&origin),
        });
        if switch_index.is_none() && is_switched(&ev.proba, y_tar, cfg.switch_confidence) {
            switch_index = Some(iter);
        }
        z = nz;
        cur = ev;
        if decrease < cfg.convergence_tol {
            status = if switch_index.is_some() {
                TerminalStatus::SwitchedAndConverged
            } else {
                TerminalStatus::NoSwitch
            };
            break;
        }
        if iter == cfg.max_iters {
            status = if switch_index.is_some() {
                TerminalStatus::SwitchedOnly
            } else {
                TerminalStatus::MaxItersReached
            };
        }
    }

    let pick = match (cfg.result_mode, switch_index) {
        (ResultMode::SwitchPoint, Some(i)) => i,
        _ => steps.len() - 1,
    };
    Ok(XGemResult {
        exemplar: steps[pick].x.clone(),
        exemplar_latent: steps[pick].z.clone(),
        trajectory: XGemTrajectory {
            steps,
            switch_index,
            source: Source {
                x: x_star.clone(),
                y: y_star,
                y_tar,
            },
            terminal_status: status,
        },
    })
}

/// How the target label is chosen for each source record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    /// Binary problems: the other class.
    OtherClass,
    /// Explicit source label to target label map; unmapped labels are errors.
    Map(BTreeMap<usize, usize>),
}

impl TargetPolicy {
    pub fn target(&self, y: usize, classes: usize) -> Result<usize> {
        match self {
            Self::OtherClass if classes == 2 && y < 2 => Ok(1 - y),
            Self::OtherClass => Err(Error::InvalidConfig(
                "the other-class policy needs a binary classifier; give an explicit target map".into(),
            )),
            Self::Map(m) => m
                .get(&y)
                .copied()
                .ok_or_else(|| Error::InvalidConfig(format!("no target label mapped for class {y}"))),
        }
    }
}

/// One xGEM per record, in record order. Failures stay per item.
pub fn batch_xgems<G, B>(
    exec: Execution,
    data: &AttributedDataset,
    policy: &TargetPolicy,
    gen: &G,
    clf: &B,
    cfg: &XGemConfig,
) -> Vec<Result<XGemResult>>
where
    G: Generator + ?Sized,
    B: BlackBox + ?Sized,
{
    par::map(exec, data.records(), |_, r| {
        let y_tar = policy.target(r.y, clf.num_classes())?;
        find_xgem(&r.x, r.y, y_tar, gen, clf, cfg)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Classifier, Head, MlpSpec, VaeModel, VaeSpec};

    fn models() -> (VaeModel, Classifier) {
        models_with(Activation::Tanh)
    }

    fn models_with(activation: Activation) -> (VaeModel, Classifier) {
        let vae = VaeModel::init(
            VaeSpec {
                data_dim: 2,
                latent_dim: 1,
                hidden: vec![8],
                activation,
                output_head: Head::Linear,
                kl_weight: 1.0,
            },
            3,
        )
        .unwrap();
        let clf = Classifier::init(MlpSpec::new(2, &[6], Activation::Tanh, 2, Head::Softmax), 5).unwrap();
        (vae, clf)
    }

    #[test]
    fn rejects_same_label_and_bad_config() {
        let (vae, clf) = models();
        let x = Tensor::vector(vec![0.5, 0.25]).unwrap();
        let cfg = XGemConfig::default();
        assert!(matches!(find_xgem(&x, 1, 1, &vae, &clf, &cfg), Err(Error::SameLabel(1))));
        let bad = XGemConfig {
            switch_confidence: 0.4,
            ..Default::default()
        };
        assert!(find_xgem(&x, 1, 0, &vae, &clf, &bad).is_err());
    }

    #[test]
    fn trajectory_invariants() {
        let (vae, clf) = models();
        let x = Tensor::vector(vec![0.5, 0.25]).unwrap();
        let cfg = XGemConfig {
            lambda: 5.0,
            max_iters: 200,
            ..Default::default()
        };
        let r = find_xgem(&x, 1, 0, &vae, &clf, &cfg).unwrap();
        let t = &r.trajectory;
        assert_eq!(t.steps[0].z, vae.encode(&x).unwrap());
        assert_eq!(t.steps[0].distance_from_origin, 0.0);
        assert!(t.steps.windows(2).all(|w| w[1].objective <= w[0].objective));
        assert_eq!(r.exemplar, vae.decode(&r.exemplar_latent).unwrap());
        if let Some(i) = t.switch_index {
            assert!(t.steps[i].proba.data()[0] >= 0.5);
            assert!(t.steps[..i].iter().all(|s| s.proba.data()[0] < 0.5));
        }
        assert_eq!(r, find_xgem(&x, 1, 0, &vae, &clf, &cfg).unwrap());
    }

    #[test]
    fn huge_fixed_step_reports_iteration() {
        // An unbounded decoder sends the reconstruction term past f64 range.
        let (vae, clf) = models_with(Activation::Relu);
        let x = Tensor::vector(vec![0.5, 0.25]).unwrap();
        let cfg = XGemConfig {
            lambda: 1.0,
            eta: 1e300,
            backtracking: false,
            ..Default::default()
        };
        match find_xgem(&x, 1, 0, &vae, &clf, &cfg) {
            Err(Error::NonFiniteObjective { iteration }) => assert!(iteration >= 1),
            other => panic!("expected a non-finite objective, got {other:?}"),
        }
    }

    #[test]
    fn batch_is_order_preserving_and_handles_empty() {
        let (vae, clf) = models();
        let cfg = XGemConfig {
            max_iters: 20,
            ..Default::default()
        };
        let empty = AttributedDataset::new(Vec::new(), "empty").unwrap();
        assert!(batch_xgems(Execution::Parallel, &empty, &TargetPolicy::OtherClass, &vae, &clf, &cfg).is_empty());
        let ds = crate::data::gen_parabola(&crate::data::ParabolaConfig {
            n: 6,
            ..Default::default()
        })
        .unwrap();
        let seq = batch_xgems(Execution::Sequential, &ds, &TargetPolicy::OtherClass, &vae, &clf, &cfg);
        let par = batch_xgems(Execution::Parallel, &ds, &TargetPolicy::OtherClass, &vae, &clf, &cfg);
        for ((s, p), rec) in seq.iter().zip(&par).zip(ds.records()) {
            let (s, p) = (s.as_ref().unwrap(), p.as_ref().unwrap());
            assert_eq!(s, p);
            assert_eq!(s.trajectory.source.x, rec.x);
        }
        let missing = TargetPolicy::Map(BTreeMap::new());
        assert!(batch_xgems(Execution::Sequential, &ds, &missing, &vae, &clf, &cfg)
            .iter()
            .all(|r| r.is_err()));
    }
}
