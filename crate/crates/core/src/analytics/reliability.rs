use serde::{Deserialize, Serialize};

use crate::data::AttributedDataset;
use crate::error::{Error, Result};
use crate::nn::BlackBox;

pub const DEFAULT_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    /// Attribute value for stratified curves.
    pub attribute: Option<u8>,
    pub bins: Vec<Bin>,
}

impl Curve {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Largest `|accuracy - mean_confidence|` over populated bins.
    pub fn max_deviation(&self) -> f64 {
        self.bins
            .iter()
            .filter_map(|b| Some((b.accuracy? - b.mean_confidence?).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityDiagram {
    pub overall: Curve,
    pub strata: Vec<Curve>,
}

/// Bin index of confidence `c` among `bins` equal-width bins on `[0, 1]`;
/// `c = 1` falls in the last bin.
pub fn bin_index(c: f64, bins: usize) -> usize {
    ((c * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Bins `(confidence, correct)` pairs.
pub fn reliability_from_predictions(confidence: &[f64], correct: &[bool], bins: usize) -> Result<Curve> {
    if bins < 2 {
        return Err(Error::InvalidConfig("a reliability diagram needs at least 2 bins".into()));
    }
    if confidence.len() != correct.len() {
        return Err(Error::LengthMismatch {
            expected: confidence.len(),
            found: correct.len(),
        });
    }
    let mut sums = vec![(0usize, 0.0f64, 0usize); bins];
    for (c, ok) in confidence.iter().zip(correct) {
        if !(0.0..=1.0).contains(c) {
            return Err(Error::InvalidConfig(format!("confidence {c} outside [0, 1]")));
        }
        let s = &mut sums[bin_index(*c, bins)];
        s.0 += 1;
        s.1 += c;
        s.2 += usize::from(*ok);
    }
    let bins = sums
        .iter()
        .enumerate()
        .map(|(i, (n, sc, hits))| Bin {
            lo: i as f64 / bins as f64,
            hi: (i + 1) as f64 / bins as f64,
            count: *n,
            mean_confidence: (*n > 0).then(|| sc / *n as f64),
            accuracy: (*n > 0).then(|| *hits as f64 / *n as f64),
        })
        .collect();
    Ok(Curve { attribute: None, bins })
}

/// Max-class confidence against correctness, optionally per attribute.
pub fn reliability_diagram<B: BlackBox + ?Sized>(
    clf: &B,
    data: &AttributedDataset,
    bins: usize,
    stratify_by_attribute: bool,
) -> Result<ReliabilityDiagram> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = clf.predict_proba(&data.features()?)?;
    let mut conf = Vec::with_capacity(data.len());
    let mut correct = Vec::with_capacity(data.len());
    for (i, r) in data.records().iter().enumerate() {
        let row = p.row(i);
        let c = p.argmax_row(i);
        conf.push(row[c]);
        correct.push(c == r.y);
    }
    let overall = reliability_from_predictions(&conf, &correct, bins)?;
    let mut strata = Vec::new();
    if stratify_by_attribute {
        let attrs = data.attributes()?;
        for a in [0u8, 1] {
            let idx: Vec<usize> = (0..data.len()).filter(|i| attrs[*i] == usize::from(a)).collect();
            let c: Vec<f64> = idx.iter().map(|i| conf[*i]).collect();
            let k: Vec<bool> = idx.iter().map(|i| correct[*i]).collect();
            let mut curve = reliability_from_predictions(&c, &k, bins)?;
            curve.attribute = Some(a);
            strata.push(curve);
        }
    }
    Ok(ReliabilityDiagram { overall, strata })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_half_predictor() {
        let conf = vec![0.5; 100];
        let correct: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let c = reliability_from_predictions(&conf, &correct, DEFAULT_BINS).unwrap();
        let populated: Vec<&Bin> = c.bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(populated.len(), 1);
        assert_eq!(populated[0].mean_confidence, Some(0.5));
        assert_eq!(populated[0].accuracy, Some(0.5));
    }

    #[test]
    fn perfect_hard_predictor() {
        let c = reliability_from_predictions(&[1.0; 10], &[true; 10], DEFAULT_BINS).unwrap();
        let last = c.bins.last().unwrap();
        assert_eq!((last.count, last.mean_confidence, last.accuracy), (10, Some(1.0), Some(1.0)));
        assert_eq!(c.total(), 10);
    }

    #[test]
    fn bins_partition_unit_interval() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 1);
        assert_eq!(bin_index(0.999, 10), 9);
        assert_eq!(bin_index(1.0, 10), 9);
        assert!(reliability_from_predictions(&[0.5], &[true], 1).is_err());
    }
}
