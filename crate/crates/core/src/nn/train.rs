//! Seeded minibatch training. A run is a pure function of
//! `(data, architecture, TrainConfig)`: the seed fixes initialization,
//! batch order and VAE noise, and all arithmetic is serial.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::classifier::Classifier;
use super::mlp::MlpSpec;
use super::optim::{Optimizer, OptimizerState};
use super::vae::{VaeModel, VaeSpec};
use super::Generator;
use crate::error::{Error, Result};
use crate::nd::{Graph, LossKind, Target, Tensor};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(beta1) || !unit(beta2) || eps <= 0.0 {
                return Err(Error::InvalidConfig("adam needs 0 <= beta < 1 and eps > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    /// Mean cross-entropy per sample over the epoch's minibatches.
    pub loss: f64,
    /// Training accuracy measured after the epoch.
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<ClassifierEpoch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    /// Mean squared reconstruction error per sample (sampled latents).
    pub reconstruction: f64,
    /// Mean KL divergence per sample.
    pub kl: f64,
    /// `-(reconstruction + kl)`, the Gaussian ELBO up to constants.
    pub elbo: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeReport {
    pub epochs: Vec<VaeEpoch>,
}

pub(crate) fn gather_rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let cols = x.cols();
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::from_raw(vec![idx.len(), cols], data)
}

fn check_batch_input(x: &Tensor, width: usize) -> Result<usize> {
    if x.shape().len() != 2 || x.shape()[0] == 0 {
        return Err(Error::EmptyDataset);
    }
    if x.shape()[1] != width {
        return Err(Error::ShapeMismatch {
            op: "train",
            lhs: x.shape().to_vec(),
            rhs: vec![width],
        });
    }
    Ok(x.shape()[0])
}

/// Trains a softmax classifier with mean cross-entropy per minibatch.
pub fn train_classifier(
    x: &Tensor,
    labels: &[usize],
    spec: &MlpSpec,
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainReport)> {
    let (mut snaps, report) = train_classifier_with_checkpoints(x, labels, spec, cfg, &[])?;
    let (_, model) = snaps.pop().expect("final model is always returned");
    Ok((model, report))
}

/// Like [`train_classifier`], additionally returning snapshots taken after
/// each epoch listed in `snapshot_epochs` (epoch 0 is the initialization).
/// The final model is always the last element.
pub fn train_classifier_with_checkpoints(
    x: &Tensor,
    labels: &[usize],
    spec: &MlpSpec,
    cfg: &TrainConfig,
    snapshot_epochs: &[usize],
) -> Result<(Vec<(usize, Classifier)>, TrainReport)> {
    cfg.validate()?;
    let n = check_batch_input(x, spec.input_dim())?;
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    let classes = spec.output_dim();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidClass { index: bad, classes });
    }

    let mut model = Classifier::init(spec.clone(), rng::derive(cfg.seed, 0xC1A5))?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &model.mlp().param_sizes());
    let mut order_rng = rng::seeded(rng::derive(cfg.seed, 0x0BDE));
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();
    let mut snaps = Vec::new();
    if snapshot_epochs.contains(&0) {
        snaps.push((0, model.clone()));
    }

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = gather_rows(x, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let binding = model.mlp().bind(&mut g, true);
            let xv = g.constant(xb);
            let logits = model.mlp().pre_head(&mut g, &binding, xv)?;
            let total = g.loss(LossKind::SoftmaxCrossEntropy, logits, Target::Classes(yb))?;
            loss_sum += g.value(total).data()[0];
            let mean = g.scale(total, 1.0 / chunk.len() as f64)?;
            let grads = g.backward(mean)?;
            let grads: Vec<Tensor> = binding.vars().into_iter().map(|v| grads.wrt(v)).collect();
            drop(g);
            opt.update(model.mlp_mut().params_mut(), &grads);
        }
        let accuracy = model.accuracy(x, labels)?;
        report.epochs.push(ClassifierEpoch {
            epoch,
            loss: loss_sum / n as f64,
            accuracy,
        });
        if snapshot_epochs.contains(&epoch) && epoch != cfg.epochs {
            snaps.push((epoch, model.clone()));
        }
    }
    snaps.push((cfg.epochs, model));
    Ok((snaps, report))
}

/// Trains a VAE with squared-error reconstruction and the reparameterized
/// Gaussian KL term, `loss = recon + kl_weight * KL` averaged per batch.
pub fn train_vae(x: &Tensor, spec: &VaeSpec, cfg: &TrainConfig) -> Result<(VaeModel, VaeReport)> {
    cfg.validate()?;
    spec.validate()?;
    let n = check_batch_input(x, spec.data_dim)?;
    let k = spec.latent_dim;

    let mut model = VaeModel::init(spec.clone(), rng::derive(cfg.seed, 0xAE))?;
    let mut sizes = model.encoder().param_sizes();
    sizes.extend(model.decoder().param_sizes());
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &sizes);
    let mut order_rng = rng::seeded(rng::derive(cfg.seed, 0x0BDE));
    let mut noise_rng = rng::seeded(rng::derive(cfg.seed, 0x0E75));
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = VaeReport::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut recon_sum, mut kl_sum) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let xb = gather_rows(x, chunk);
            let eps: Vec<f64> = (0..b * k).map(|_| StandardNormal.sample(&mut noise_rng)).collect();

            let mut g = Graph::new();
            let enc = model.encoder().bind(&mut g, true);
            let dec = model.decoder().bind(&mut g, true);
            let xv = g.constant(xb.clone());
            let stats = model.encoder().pre_head(&mut g, &enc, xv)?;
            let mu = g.slice_cols(stats, 0, k)?;
            let logvar = g.slice_cols(stats, k, 2 * k)?;
            let half = g.scale(logvar, 0.5)?;
            let std = g.exp(half)?;
            let noise = g.constant(Tensor::from_raw(vec![b, k], eps));
            let spread = g.mul(std, noise)?;
            let z = g.add(mu, spread)?;
            let h = model.decoder().pre_head(&mut g, &dec, z)?;
            let xr = model.decoder().apply_head(&mut g, h)?;
            let recon = g.loss(LossKind::SquaredError, xr, Target::Dense(xb))?;
            let kl = g.gaussian_kl(mu, logvar)?;
            recon_sum += g.value(recon).data()[0];
            kl_sum += g.value(kl).data()[0];
            let weighted = g.scale(kl, spec.kl_weight)?;
            let total = g.add(recon, weighted)?;
            let mean = g.scale(total, 1.0 / b as f64)?;
            let grads = g.backward(mean)?;
            let grads: Vec<Tensor> = enc
                .vars()
                .into_iter()
                .chain(dec.vars())
                .map(|v| grads.wrt(v))
                .collect();
            drop(g);
            let (e, d) = model.parts_mut();
            let mut params = e.params_mut();
            params.extend(d.params_mut());
            opt.update(params, &grads);
        }
        let (reconstruction, kl) = (recon_sum / n as f64, kl_sum / n as f64);
        report.epochs.push(VaeEpoch {
            epoch,
            reconstruction,
            kl,
            elbo: -(reconstruction + kl),
        });
    }
    Ok((model, report))
}

/// Mean over rows of `||decode(encode(x)) - x||^2`; the generator quality gate
/// compares this against a per-dataset threshold.
pub fn reconstruction_error<G: Generator + ?Sized>(gen: &G, x: &Tensor) -> Result<f64> {
    let n = check_batch_input(x, gen.data_dim())?;
    let xr = gen.decode(&gen.encode(x)?)?;
    let total: f64 = x
        .data()
        .iter()
        .zip(xr.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / n as f64)
}

/// Passes when the mean reconstruction error is strictly below `threshold`;
/// returns the measured error.
pub fn quality_gate<G: Generator + ?Sized>(gen: &G, x: &Tensor, threshold: f64) -> Result<f64> {
    let error = reconstruction_error(gen, x)?;
    if error < threshold {
        Ok(error)
    } else {
        Err(Error::QualityGate { error, threshold })
    }
}
