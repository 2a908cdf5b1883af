use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Head, Mlp, MlpSpec};
use super::Generator;
use crate::error::{Error, Result};
use crate::nd::{Graph, Tensor, Var};
use crate::rng;

/// Architecture of a Gaussian-latent autoencoder.
///
/// The encoder emits `2k` columns, `[mu | logvar]`. The decoder mirrors the
/// encoder's hidden widths and ends in `output_head` (linear for
/// unbounded data, sigmoid for pixels in `[0, 1]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeSpec {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output_head: Head,
    /// Weight on the KL term of the training loss.
    pub kl_weight: f64,
}

impl VaeSpec {
    pub fn encoder_spec(&self) -> MlpSpec {
        MlpSpec::new(
            self.data_dim,
            &self.hidden,
            self.activation,
            2 * self.latent_dim,
            Head::Linear,
        )
    }

    pub fn decoder_spec(&self) -> MlpSpec {
        let hidden: Vec<usize> = self.hidden.iter().rev().copied().collect();
        MlpSpec::new(
            self.latent_dim,
            &hidden,
            self.activation,
            self.data_dim,
            self.output_head,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.data_dim == 0 {
            return Err(Error::InvalidConfig("latent and data dims must be >= 1".into()));
        }
        if self.output_head == Head::Softmax {
            return Err(Error::InvalidConfig("decoder head must be linear or sigmoid".into()));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::InvalidConfig("kl_weight must be finite and >= 0".into()));
        }
        self.encoder_spec().validate()?;
        self.decoder_spec().validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    spec: VaeSpec,
    encoder: Mlp,
    decoder: Mlp,
}

impl VaeModel {
    pub fn init(spec: VaeSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let encoder = Mlp::init(spec.encoder_spec(), rng::derive(seed, 1))?;
        let decoder = Mlp::init(spec.decoder_spec(), rng::derive(seed, 2))?;
        Ok(Self {
            spec,
            encoder,
            decoder,
        })
    }

    pub fn from_parts(spec: VaeSpec, encoder: Mlp, decoder: Mlp) -> Result<Self> {
        spec.validate()?;
        if *encoder.spec() != spec.encoder_spec() || *decoder.spec() != spec.decoder_spec() {
            return Err(Error::Inconsistent(
                "encoder/decoder architecture does not match the VAE spec".into(),
            ));
        }
        Ok(Self {
            spec,
            encoder,
            decoder,
        })
    }

    pub fn spec(&self) -> &VaeSpec {
        &self.spec
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Mlp, &mut Mlp) {
        (&mut self.encoder, &mut self.decoder)
    }

    /// Posterior mean and log-variance for `x: [n x d]`.
    pub fn posterior(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let input = x.as_row_matrix()?;
        let mut g = Graph::new();
        let xv = g.constant(input);
        let stats = self.encoder.forward_on(&mut g, xv)?;
        let k = self.spec.latent_dim;
        let mu = g.slice_cols(stats, 0, k)?;
        let lv = g.slice_cols(stats, k, 2 * k)?;
        Ok((g.value(mu).clone(), g.value(lv).clone()))
    }
}

impl Generator for VaeModel {
    fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    fn data_dim(&self) -> usize {
        self.spec.data_dim
    }

    /// Returns the posterior mean; no sampling at inference time.
    fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let width = x.shape().last().copied().unwrap_or(0);
        if x.shape().len() > 2 || width != self.spec.data_dim {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: x.shape().to_vec(),
                rhs: vec![self.spec.data_dim],
            });
        }
        let (mu, _) = self.posterior(x)?;
        if x.shape().len() == 1 {
            mu.reshape(&[self.spec.latent_dim])
        } else {
            Ok(mu)
        }
    }

    fn decode_on(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self.decoder.forward_on(g, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> VaeSpec {
        VaeSpec {
            data_dim: 4,
            latent_dim: 2,
            hidden: vec![8],
            activation: Activation::Tanh,
            output_head: Head::Linear,
            kl_weight: 1.0,
        }
    }

    #[test]
    fn encode_decode_shapes_and_determinism() {
        let vae = VaeModel::init(spec(), 3).unwrap();
        let x = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let z1 = vae.encode(&x).unwrap();
        let z2 = vae.encode(&x).unwrap();
        assert_eq!(z1.shape(), &[2]);
        assert_eq!(z1, z2);
        assert_eq!(vae.decode(&z1).unwrap().shape(), &[4]);
        assert!(vae.encode(&Tensor::zeros(&[3])).is_err());
        assert!(vae.decode(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn batch_encode_preserves_order() {
        let vae = VaeModel::init(spec(), 3).unwrap();
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.1; 4]).collect();
        let batch = vae.encode(&Tensor::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(batch.shape(), &[5, 2]);
        for (i, r) in rows.iter().enumerate() {
            let single = vae.encode(&Tensor::vector(r.clone()).unwrap()).unwrap();
            for (a, b) in single.data().iter().zip(batch.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_softmax_decoder() {
        let mut s = spec();
        s.output_head = Head::Softmax;
        assert!(VaeModel::init(s, 0).is_err());
    }
}
