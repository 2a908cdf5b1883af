use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nd::{Graph, Tensor, Var};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Output head applied after the last affine layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Softmax,
    Linear,
    Sigmoid,
}

/// Layer widths from input to output, one activation per hidden layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub head: Head,
}

impl MlpSpec {
    /// `input -> hidden... -> output` with one activation for every hidden layer.
    pub fn new(input: usize, hidden: &[usize], activation: Activation, output: usize, head: Head) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self {
            widths,
            activations: vec![activation; hidden.len()],
            head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidConfig("an MLP needs input and output widths".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if self.activations.len() != self.widths.len() - 2 {
            return Err(Error::InvalidConfig(format!(
                "{} hidden layers but {} activations",
                self.widths.len() - 2,
                self.activations.len()
            )));
        }
        if self.head == Head::Softmax && self.output_dim() < 2 {
            return Err(Error::InvalidConfig("softmax head needs at least 2 outputs".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn hidden_layers(&self) -> usize {
        self.widths.len().saturating_sub(2)
    }
}

/// Affine layer `x W + b` with `W: [in x out]` and `b: [1 x out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Arc<Tensor>,
    pub bias: Arc<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

/// Graph handles for one bound copy of an MLP's parameters.
#[derive(Clone, Debug)]
pub struct Binding {
    layers: Vec<(Var, Var)>,
}

impl Binding {
    /// Parameter handles in the canonical `(w0, b0, w1, b1, ...)` order.
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect()
    }
}

impl Mlp {
    /// Glorot-uniform weights (He-uniform ahead of ReLU), zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::seeded(seed);
        let mut layers = Vec::with_capacity(spec.widths.len() - 1);
        for (i, pair) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = match spec.activations.get(i) {
                Some(Activation::Relu) => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            layers.push(Dense {
                weight: Arc::new(Tensor::matrix(fan_in, fan_out, w)?),
                bias: Arc::new(Tensor::zeros(&[1, fan_out])),
            });
        }
        Ok(Self { spec, layers })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_parts(spec: MlpSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let expected = 2 * (spec.widths.len() - 1);
        if params.len() != expected {
            return Err(Error::Inconsistent(format!(
                "expected {expected} parameter tensors, found {}",
                params.len()
            )));
        }
        let mut layers = Vec::with_capacity(expected / 2);
        let mut it = params.into_iter();
        for pair in spec.widths.windows(2) {
            let (w, b) = (it.next().expect("counted"), it.next().expect("counted"));
            if w.shape() != [pair[0], pair[1]] || b.shape() != [1, pair[1]] {
                return Err(Error::Inconsistent(format!(
                    "layer {}x{} has parameter shapes {:?} and {:?}",
                    pair[0],
                    pair[1],
                    w.shape(),
                    b.shape()
                )));
            }
            layers.push(Dense {
                weight: Arc::new(w),
                bias: Arc::new(b),
            });
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Arc<Tensor>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub(crate) fn param_sizes(&self) -> Vec<usize> {
        self.parameters().iter().map(|t| t.len()).collect()
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_ref(), l.bias.as_ref()])
            .collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (
                        g.parameter_shared(l.weight.clone()),
                        g.parameter_shared(l.bias.clone()),
                    )
                } else {
                    (
                        g.constant_shared(l.weight.clone()),
                        g.constant_shared(l.bias.clone()),
                    )
                }
            })
            .collect();
        Binding { layers }
    }

    /// Output of the last affine layer (before the head) for `x: [n x in]`.
    pub fn pre_head(&self, g: &mut Graph, binding: &Binding, x: Var) -> Result<Var> {
        let rows = g.shape(x)[0];
        let ones = g.constant(Tensor::ones(&[rows, 1]));
        let mut h = x;
        let last = binding.layers.len() - 1;
        for (i, (w, b)) in binding.layers.iter().enumerate() {
            let xw = g.matmul(h, *w)?;
            let bias_rows = g.matmul(ones, *b)?;
            h = g.add(xw, bias_rows)?;
            if i < last {
                h = match self.spec.activations[i] {
                    Activation::Relu => g.relu(h)?,
                    Activation::Tanh => g.tanh(h)?,
                };
            }
        }
        Ok(h)
    }

    pub fn apply_head(&self, g: &mut Graph, h: Var) -> Result<Var> {
        match self.spec.head {
            Head::Softmax => g.softmax(h),
            Head::Sigmoid => g.sigmoid(h),
            Head::Linear => Ok(h),
        }
    }

    /// Full forward pass with frozen parameters.
    pub fn forward_on(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let binding = self.bind(g, false);
        let h = self.pre_head(g, &binding, x)?;
        self.apply_head(g, h)
    }

    /// Forward pass on values: `[d]` gives `[out]`, `[n x d]` gives `[n x out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let rank1 = x.shape().len() == 1;
        let input = x.as_row_matrix()?;
        if input.shape()[1] != self.spec.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "mlp forward",
                lhs: x.shape().to_vec(),
                rhs: vec![self.spec.input_dim()],
            });
        }
        let mut g = Graph::new();
        let xv = g.constant(input);
        let out = self.forward_on(&mut g, xv)?;
        let out = g.value(out).clone();
        if rank1 {
            out.reshape(&[self.spec.output_dim()])
        } else {
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        let ok = MlpSpec::new(2, &[8], Activation::Tanh, 2, Head::Softmax);
        assert!(ok.validate().is_ok());
        let mut bad = ok.clone();
        bad.widths[1] = 0;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.activations.clear();
        assert!(bad.validate().is_err());
        assert!(MlpSpec::new(2, &[], Activation::Tanh, 1, Head::Softmax)
            .validate()
            .is_err());
    }

    #[test]
    fn forward_shapes() {
        let mlp = Mlp::init(MlpSpec::new(3, &[4], Activation::Relu, 2, Head::Linear), 1).unwrap();
        let one = mlp.forward(&Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap()).unwrap();
        assert_eq!(one.shape(), &[2]);
        let batch = mlp.forward(&Tensor::zeros(&[5, 3])).unwrap();
        assert_eq!(batch.shape(), &[5, 2]);
        assert!(mlp.forward(&Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn from_parts_checks_shapes() {
        let mlp = Mlp::init(MlpSpec::new(3, &[4], Activation::Relu, 2, Head::Linear), 1).unwrap();
        let params: Vec<Tensor> = mlp.parameters().into_iter().cloned().collect();
        let back = Mlp::from_parts(mlp.spec().clone(), params.clone()).unwrap();
        assert_eq!(back, mlp);
        let mut wrong = params;
        wrong.swap(0, 2);
        assert!(matches!(
            Mlp::from_parts(mlp.spec().clone(), wrong),
            Err(Error::Inconsistent(_))
        ));
    }
}
