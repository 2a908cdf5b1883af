//! The model triple: generator/encoder pair, black-box classifier, and the
//! training loops and checkpoint format that go with them.
//!
//! Algorithms in this crate only see models through [`Generator`] and
//! [`BlackBox`]; the MLP-based [`VaeModel`] and [`Classifier`] are the
//! shipped implementations.

mod checkpoint;
mod classifier;
mod mlp;
mod optim;
mod train;
mod vae;

pub use checkpoint::{from_bytes, load_model, save_model, to_bytes, Persist, FORMAT_VERSION, MAGIC};
pub use classifier::Classifier;
pub use mlp::{Activation, Binding, Dense, Head, Mlp, MlpSpec};
pub use optim::{Optimizer, OptimizerState};
pub use train::{
    quality_gate, reconstruction_error, train_classifier, train_classifier_with_checkpoints, train_vae,
    ClassifierEpoch, TrainConfig, TrainReport, VaeEpoch, VaeReport,
};
pub use vae::{VaeModel, VaeSpec};

use crate::error::Result;
use crate::nd::{Graph, Tensor, Var};

/// Differentiable map from data space to class scores.
pub trait BlackBox: Send + Sync {
    fn num_classes(&self) -> usize;

    fn input_dim(&self) -> usize;

    /// Logits for a batch `x: [n x d]` recorded on `g` with frozen weights.
    fn logits_on(&self, g: &mut Graph, x: Var) -> Result<Var>;

    /// Class probabilities: `[d] -> [C]` or `[n x d] -> [n x C]`.
    fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let rank1 = x.shape().len() == 1;
        let input = x.as_row_matrix()?;
        check_width("predict_proba", x, input.shape()[1], self.input_dim())?;
        let mut g = Graph::new();
        let xv = g.constant(input);
        let logits = self.logits_on(&mut g, xv)?;
        let p = g.softmax(logits)?;
        let p = g.value(p).clone();
        if rank1 {
            p.reshape(&[self.num_classes()])
        } else {
            Ok(p)
        }
    }

    fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.predict_proba(x)?.argmax())
    }
}

/// Latent-variable generator with an inference map back into latent space.
pub trait Generator: Send + Sync {
    fn latent_dim(&self) -> usize;

    fn data_dim(&self) -> usize;

    /// Deterministic latent code: `[d] -> [k]` or `[n x d] -> [n x k]`.
    fn encode(&self, x: &Tensor) -> Result<Tensor>;

    /// Decoder recorded on `g` with frozen weights, `z: [n x k] -> [n x d]`.
    fn decode_on(&self, g: &mut Graph, z: Var) -> Result<Var>;

    fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let rank1 = z.shape().len() == 1;
        let input = z.as_row_matrix()?;
        check_width("decode", z, input.shape()[1], self.latent_dim())?;
        let mut g = Graph::new();
        let zv = g.constant(input);
        let x = self.decode_on(&mut g, zv)?;
        let x = g.value(x).clone();
        if rank1 {
            x.reshape(&[self.data_dim()])
        } else {
            Ok(x)
        }
    }
}

fn check_width(op: &'static str, x: &Tensor, found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(crate::Error::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![expected],
        })
    }
}
