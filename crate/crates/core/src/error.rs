//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape {shape:?} does not hold {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("{op}: argument must be strictly positive")]
    NonPositive { op: &'static str },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("class index {index} out of range for {classes} classes")]
    InvalidClass { index: usize, classes: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported checkpoint format: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),

    #[error("target label {0} equals the source label")]
    SameLabel(usize),

    #[error("generator quality gate failed: reconstruction error {error:.5} >= threshold {threshold:.5}")]
    QualityGate { error: f64, threshold: f64 },

    #[error("non-finite objective at iteration {iteration} (step size too large?)")]
    NonFiniteObjective { iteration: usize },

    #[error("bad IDX magic number: expected {expected}, found {found}")]
    BadMagic { expected: u32, found: u32 },

    #[error("IDX image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("equalized-odds recalibration infeasible: {0}")]
    Infeasible(String),

    #[error("oracle accuracy {accuracy:.4} does not exceed tau = {tau:.4}")]
    AccuracyBelowTau { accuracy: f64, tau: f64 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("nothing to evaluate: {0}")]
    Empty(String),

    #[error("degenerate logistic fit cannot be aligned")]
    DegenerateFit,

    #[error("{0} CSV artifacts did not reproduce bitwise")]
    NotReproduced(usize),

    #[error("missing input file {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}
