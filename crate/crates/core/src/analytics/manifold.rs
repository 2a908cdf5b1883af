use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic_points, LogisticFit};
use crate::error::{Error, Result};
use crate::nn::BlackBox;
use crate::xgem::XGemTrajectory;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifoldMeta {
    pub sample_id: usize,
    pub y: usize,
    pub a: Option<u8>,
    /// Training checkpoint (epoch) of the classifier.
    pub checkpoint: Option<usize>,
}

/// Source-class confidence versus distance from the step-0 reconstruction.
///
/// Distances are stored as measured; alignment moves `origin` instead, so
/// the plotted coordinate is `distance - origin` while the measured values
/// stay untouched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceManifold {
    pub distances: Vec<f64>,
    pub confidences: Vec<f64>,
    pub origin: f64,
    pub meta: ManifoldMeta,
}

impl ConfidenceManifold {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    /// Horizontal coordinates after alignment.
    pub fn positions(&self) -> Vec<f64> {
        self.distances.iter().map(|d| d - self.origin).collect()
    }

    /// `(position, confidence)` pairs.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.positions().into_iter().zip(self.confidences.iter().copied()).collect()
    }
}

/// Re-evaluates `clf` along the trajectory, tracking the source class.
pub fn confidence_manifold<B: BlackBox + ?Sized>(
    traj: &XGemTrajectory,
    clf: &B,
    meta: ManifoldMeta,
) -> Result<ConfidenceManifold> {
    if traj.steps.is_empty() {
        return Err(Error::Empty("trajectory has no steps".into()));
    }
    let y = traj.source.y;
    let mut confidences = Vec::with_capacity(traj.steps.len());
    for s in &traj.steps {
        confidences.push(clf.predict_proba(&s.x)?.data()[y]);
    }
    Ok(ConfidenceManifold {
        distances: traj.distances(),
        confidences,
        origin: 0.0,
        meta,
    })
}

/// Fits the logistic to `1 - confidence`, which rises across the boundary,
/// so well-behaved manifolds get `k > 0`.
pub fn fit_logistic(m: &ConfidenceManifold) -> Result<LogisticFit> {
    let ys: Vec<f64> = m.confidences.iter().map(|c| 1.0 - c).collect();
    fit_logistic_points(&m.positions(), &ys)
}

/// Moves every manifold so its fitted midpoint sits at 0.
pub fn shift_align(items: &[(ConfidenceManifold, LogisticFit)]) -> Result<Vec<ConfidenceManifold>> {
    items
        .iter()
        .map(|(m, f)| {
            if f.degenerate {
                return Err(Error::DegenerateFit);
            }
            Ok(ConfidenceManifold {
                origin: m.origin + f.x0,
                ..m.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::logistic::logistic;

    fn synthetic(k: f64, x0: f64) -> ConfidenceManifold {
        let distances: Vec<f64> = (0..40).map(|i| f64::from(i) * 0.1).collect();
        ConfidenceManifold {
            confidences: distances.iter().map(|d| 1.0 - logistic(k, x0, *d)).collect(),
            distances,
            origin: 0.0,
            meta: ManifoldMeta::default(),
        }
    }

    #[test]
    fn align_then_refit() {
        let m = synthetic(4.0, 1.2);
        let f = fit_logistic(&m).unwrap();
        assert!((f.x0 - 1.2).abs() < 1e-6 && (f.k - 4.0).abs() < 1e-6);
        let aligned = shift_align(&[(m.clone(), f)]).unwrap();
        let g = fit_logistic(&aligned[0]).unwrap();
        assert!(g.x0.abs() < 1e-6);
        assert!((g.k - f.k).abs() < 1e-9);
        assert_eq!(aligned[0].distances, m.distances);
        let again = shift_align(&[(aligned[0].clone(), g)]).unwrap();
        assert!((again[0].origin - aligned[0].origin).abs() < 1e-6);
    }

    #[test]
    fn degenerate_cannot_be_aligned() {
        let m = synthetic(4.0, 1.2);
        let f = LogisticFit {
            k: 0.0,
            x0: 0.0,
            residual: 0.0,
            degenerate: true,
        };
        assert!(matches!(shift_align(&[(m, f)]), Err(Error::DegenerateFit)));
    }
}
