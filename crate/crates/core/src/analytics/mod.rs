//! Decision-boundary diagnostics along exemplar trajectories: confidence
//! manifolds, logistic fits and their alignment, fit-parameter histograms,
//! and reliability diagrams.

mod histogram;
mod logistic;
mod manifold;
mod reliability;

pub use histogram::{param_histogram2d, ParamHistograms, StratumHistogram, StratumKey};
pub use logistic::{fit_logistic_points, logistic, sse, LogisticFit, DEGENERATE_RANGE};
pub use manifold::{confidence_manifold, fit_logistic, shift_align, ConfidenceManifold, ManifoldMeta};
pub use reliability::{
    bin_index, reliability_diagram, reliability_from_predictions, Bin, Curve, ReliabilityDiagram, DEFAULT_BINS,
};
