//! Untargeted projected-gradient attack in an `l_inf` ball: sign-gradient
//! ascent on the cross-entropy of the true label, projected back into the
//! ball after every step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nd::{Graph, LossKind, Target, Tensor};
use crate::nn::BlackBox;
use crate::par::{self, Execution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Ball radius. Zero is accepted and pins the iterate to the input.
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.3,
            steps: 20,
            step_size: 0.05,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("epsilon must be finite and >= 0".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be positive".into()));
        }
        if !(self.step_size > 0.0) || (self.epsilon > 0.0 && self.step_size > self.epsilon) {
            return Err(Error::InvalidConfig("step_size must lie in (0, epsilon]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackStep {
    pub iter: usize,
    pub x: Tensor,
    pub proba: Tensor,
    /// Cross-entropy of the true label.
    pub loss: f64,
    pub distance_from_origin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub adversarial: Tensor,
    pub label: usize,
    pub steps: Vec<AttackStep>,
}

/// Moves `v` one representable value towards `target`.
fn nudge(v: f64, target: f64) -> f64 {
    if v > target {
        v.next_down()
    } else {
        v.next_up()
    }
}

/// Closest value to `v` within `[c - eps, c + eps]` whose computed offset
/// `|v - c|` does not exceed `eps`.
fn project(v: f64, c: f64, eps: f64) -> f64 {
    let mut p = v.clamp(c - eps, c + eps);
    while (p - c).abs() > eps {
        p = nudge(p, c);
    }
    p
}

fn loss_and_grad<B: BlackBox + ?Sized>(clf: &B, x: &Tensor, y: usize) -> Result<(f64, Tensor, Vec<f64>)> {
    let mut g = Graph::new();
    let xv = g.input(x.as_row_matrix()?);
    let logits = clf.logits_on(&mut g, xv)?;
    let loss = g.loss(LossKind::SoftmaxCrossEntropy, logits, Target::Classes(vec![y]))?;
    let proba = g.softmax(logits)?;
    let grads = g.backward(loss)?;
    Ok((
        g.value(loss).item().expect("scalar"),
        g.value(proba).reshape(&[clf.num_classes()])?,
        grads.wrt(xv).into_data(),
    ))
}

pub fn pgd_attack<B: BlackBox + ?Sized>(x: &Tensor, y: usize, clf: &B, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    if y >= clf.num_classes() {
        return Err(Error::InvalidClass {
            index: y,
            classes: clf.num_classes(),
        });
    }
    if x.shape() != [clf.input_dim()] {
        return Err(Error::ShapeMismatch {
            op: "pgd_attack",
            lhs: x.shape().to_vec(),
            rhs: vec![clf.input_dim()],
        });
    }
    let mut cur = x.clone();
    let (mut loss, mut proba, mut grad) = loss_and_grad(clf, &cur, y)?;
    let mut steps = vec![AttackStep {
        iter: 0,
        x: cur.clone(),
        proba: proba.clone(),
        loss,
        distance_from_origin: 0.0,
    }];
    for iter in 1..=cfg.steps {
        let next: Vec<f64> = cur
            .data()
            .iter()
            .zip(&grad)
            .zip(x.data())
            .map(|((v, g), c)| {
                let s = if *g > 0.0 {
                    1.0
                } else if *g < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                project(v + cfg.step_size * s, *c, cfg.epsilon)
            })
            .collect();
        cur = Tensor::vector(next).map_err(|_| Error::NonFinite("pgd iterate"))?;
        (loss, proba, grad) = loss_and_grad(clf, &cur, y)?;
        steps.push(AttackStep {
            iter,
            x: cur.clone(),
            proba: proba.clone(),
            loss,
            distance_from_origin: cur.l2_distance(x),
        });
    }
    Ok(AttackResult {
        adversarial: cur,
        label: y,
        steps,
    })
}

/// One attack per `(x, y)` pair, in input order.
pub fn batch_attacks<B: BlackBox + ?Sized>(
    exec: Execution,
    inputs: &[(Tensor, usize)],
    clf: &B,
    cfg: &AttackConfig,
) -> Vec<Result<AttackResult>> {
    par::map(exec, inputs, |_, (x, y)| pgd_attack(x, *y, clf, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Classifier, Head, Mlp, MlpSpec};

    fn linear(w: [f64; 2]) -> Classifier {
        // Logits are (0, w.x): a linear two-class model.
        let spec = MlpSpec {
            widths: vec![2, 2],
            activations: vec![],
            head: Head::Softmax,
        };
        let weight = Tensor::matrix(2, 2, vec![0.0, w[0], 0.0, w[1]]).unwrap();
        Classifier::new(Mlp::from_parts(spec, vec![weight, Tensor::zeros(&[1, 2])]).unwrap()).unwrap()
    }

    #[test]
    fn zero_radius_is_identity() {
        let clf = Classifier::init(MlpSpec::new(2, &[4], Activation::Tanh, 2, Head::Softmax), 1).unwrap();
        let x = Tensor::vector(vec![0.3, -0.7]).unwrap();
        let cfg = AttackConfig {
            epsilon: 0.0,
            steps: 5,
            step_size: 0.1,
        };
        let r = pgd_attack(&x, 0, &clf, &cfg).unwrap();
        assert_eq!(r.adversarial, x);
    }

    #[test]
    fn linear_model_single_step_closed_form() {
        let clf = linear([2.0, -3.0]);
        let x = Tensor::vector(vec![0.1, 0.2]).unwrap();
        let cfg = AttackConfig {
            epsilon: 0.25,
            steps: 1,
            step_size: 0.25,
        };
        // True class 1: loss grows as w.x shrinks, so move against sign(w).
        let r = pgd_attack(&x, 1, &clf, &cfg).unwrap();
        assert_eq!(r.adversarial.data(), &[0.1 - 0.25, 0.2 + 0.25]);
        let r = pgd_attack(&x, 0, &clf, &cfg).unwrap();
        assert_eq!(r.adversarial.data(), &[0.1 + 0.25, 0.2 - 0.25]);
    }

    #[test]
    fn ball_constraint_and_ascent() {
        let clf = Classifier::init(MlpSpec::new(3, &[8], Activation::Tanh, 3, Head::Softmax), 4).unwrap();
        let x = Tensor::vector(vec![0.1, 0.7, -0.3]).unwrap();
        let cfg = AttackConfig {
            epsilon: 0.3,
            steps: 30,
            step_size: 0.07,
        };
        let r = pgd_attack(&x, 2, &clf, &cfg).unwrap();
        for s in &r.steps {
            for (a, b) in s.x.data().iter().zip(x.data()) {
                assert!((a - b).abs() <= cfg.epsilon);
            }
        }
        assert!(r.steps.last().unwrap().loss >= r.steps[0].loss);
    }

    #[test]
    fn projection_never_overshoots() {
        for (v, c, e) in [(1.0, 0.1, 0.3), (-5.0, 0.7, 0.1), (0.3, 0.2, 0.1)] {
            let p = project(v, c, e);
            assert!((p - c).abs() <= e);
        }
    }

    #[test]
    fn rejects_oversized_step() {
        let cfg = AttackConfig {
            epsilon: 0.1,
            steps: 1,
            step_size: 0.2,
        };
        assert!(cfg.validate().is_err());
    }
}
