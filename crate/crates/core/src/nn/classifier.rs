use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mlp::{Head, Mlp, MlpSpec};
use super::BlackBox;
use crate::error::{Error, Result};
use crate::nd::{Graph, Tensor, Var};

/// Softmax MLP classifier. Binary tasks use class indices `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    mlp: Mlp,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ClassifierMeta {
    pub spec: MlpSpec,
}

impl Classifier {
    pub fn new(mlp: Mlp) -> Result<Self> {
        if mlp.spec().head != Head::Softmax {
            return Err(Error::InvalidConfig("classifier needs a softmax head".into()));
        }
        Ok(Self { mlp })
    }

    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        Self::new(Mlp::init(spec, seed)?)
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub(crate) fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn spec(&self) -> &MlpSpec {
        self.mlp.spec()
    }

    /// Same network with its output logits multiplied by `factor`
    /// (a temperature of `1 / factor`).
    pub fn with_logit_scale(&self, factor: f64) -> Result<Self> {
        let mut out = self.clone();
        let last = out.mlp.layers_mut().last_mut().expect("at least one layer");
        for t in [&mut last.weight, &mut last.bias] {
            let scaled: Vec<f64> = t.data().iter().map(|v| v * factor).collect();
            *t = Arc::new(Tensor::new(t.shape().to_vec(), scaled)?);
        }
        Ok(out)
    }

    /// Fraction of rows of `x: [n x d]` whose argmax matches `labels`.
    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let p = self.predict_proba(x)?;
        let hits = labels
            .iter()
            .enumerate()
            .filter(|(i, y)| p.argmax_row(*i) == **y)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

impl BlackBox for Classifier {
    fn num_classes(&self) -> usize {
        self.mlp.spec().output_dim()
    }

    fn input_dim(&self) -> usize {
        self.mlp.spec().input_dim()
    }

    fn logits_on(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let binding = self.mlp.bind(g, false);
        self.mlp.pre_head(g, &binding, x)
    }
}
