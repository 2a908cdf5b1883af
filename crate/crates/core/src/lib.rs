//! Manifold guided exemplars (xGEMs) for probing black-box classifiers.
//!
//! A generative model stands in for the data manifold. Starting from the
//! latent code of a sample, [`xgem::find_xgem`] walks the latent space until
//! the black-box switches to a target label, producing an on-manifold
//! counterfactual. On top of that the crate provides the off-manifold PGD
//! baseline, a confounding audit with an equalized-odds attribute oracle, and
//! decision-boundary diagnostics (confidence manifolds, logistic fits,
//! reliability diagrams).

pub mod adversarial;
pub mod analytics;
pub mod audit;
pub mod data;
pub mod error;
pub mod experiments;
pub mod export;
pub mod nd;
pub mod nn;
pub mod par;
pub mod plot;
pub mod rng;
pub mod xgem;

pub use error::{Error, Result};
pub use nd::{Graph, Tensor, Var};
