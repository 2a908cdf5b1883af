use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::nd::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment buffers for one training run.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, lr: f64, sizes: &[usize]) -> Self {
        let buffers = || sizes.iter().map(|n| vec![0.0; *n]).collect();
        Self {
            kind,
            lr,
            step: 0,
            m: buffers(),
            v: buffers(),
        }
    }

    /// Applies one update; `params` and `grads` are aligned by position.
    pub fn update(&mut self, params: Vec<&mut Arc<Tensor>>, grads: &[Tensor]) {
        self.step += 1;
        let lr = self.lr;
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let p = Arc::make_mut(p).data_mut();
            match self.kind {
                Optimizer::Sgd => {
                    for (w, d) in p.iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.step as i32);
                    let c2 = 1.0 - beta2.powi(self.step as i32);
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..p.len() {
                        let d = g.data()[j];
                        m[j] = beta1 * m[j] + (1.0 - beta1) * d;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * d * d;
                        p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_and_adam_descend_a_quadratic() {
        for kind in [Optimizer::Sgd, Optimizer::default()] {
            let mut w = Arc::new(Tensor::vector(vec![3.0, -2.0]).unwrap());
            let mut state = OptimizerState::new(kind, 0.1, &[2]);
            for _ in 0..200 {
                let g = Tensor::vector(w.data().iter().map(|x| 2.0 * x).collect()).unwrap();
                state.update(vec![&mut w], &[g]);
            }
            assert!(w.data().iter().all(|x| x.abs() < 0.05), "{kind:?} {:?}", w.data());
        }
    }
}
