use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::logistic::LogisticFit;
use crate::error::{Error, Result};

/// Stratum key: target label and optional attribute.
pub type StratumKey = (usize, Option<u8>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumHistogram {
    pub y: usize,
    pub a: Option<u8>,
    /// `counts[i][j]`: `k` in bin `i`, `x0` in bin `j`.
    pub counts: Vec<Vec<usize>>,
    pub degenerate: usize,
    pub mean_k: f64,
    pub mean_x0: f64,
}

impl StratumHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum::<usize>() + self.degenerate
    }
}

/// Per-stratum 2-D histograms over `(k, x0)` sharing one set of bin edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamHistograms {
    pub k_edges: Vec<f64>,
    pub x0_edges: Vec<f64>,
    pub strata: Vec<StratumHistogram>,
}

fn edges(values: impl Iterator<Item = f64>, bins: usize) -> Vec<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
}

fn bin_of(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    (((v - lo) / (hi - lo) * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Bins the non-degenerate fits of each stratum; degenerate fits are
/// counted on their own. Every stratum present must hold at least one
/// non-degenerate fit.
pub fn param_histogram2d(fits: &[(StratumKey, LogisticFit)], k_bins: usize, x0_bins: usize) -> Result<ParamHistograms> {
    if k_bins == 0 || x0_bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin per axis".into()));
    }
    let good = || fits.iter().filter(|(_, f)| !f.degenerate).map(|(_, f)| f);
    let k_edges = edges(good().map(|f| f.k), k_bins);
    let x0_edges = edges(good().map(|f| f.x0), x0_bins);
    let mut by: BTreeMap<StratumKey, Vec<&LogisticFit>> = BTreeMap::new();
    for (key, f) in fits {
        by.entry(*key).or_default().push(f);
    }
    let mut strata = Vec::with_capacity(by.len());
    for ((y, a), fs) in by {
        let mut counts = vec![vec![0usize; x0_bins]; k_bins];
        let (mut degenerate, mut sk, mut sx, mut n) = (0, 0.0, 0.0, 0usize);
        for f in fs {
            if f.degenerate {
                degenerate += 1;
                continue;
            }
            counts[bin_of(&k_edges, f.k)][bin_of(&x0_edges, f.x0)] += 1;
            sk += f.k;
            sx += f.x0;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty(format!("stratum y={y}, a={a:?} has no non-degenerate fit")));
        }
        strata.push(StratumHistogram {
            y,
            a,
            counts,
            degenerate,
            mean_k: sk / n as f64,
            mean_x0: sx / n as f64,
        });
    }
    Ok(ParamHistograms {
        k_edges,
        x0_edges,
        strata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(k: f64, x0: f64, degenerate: bool) -> LogisticFit {
        LogisticFit {
            k,
            x0,
            residual: 0.0,
            degenerate,
        }
    }

    #[test]
    fn identical_fits_share_one_cell() {
        let fits: Vec<_> = (0..7).map(|_| ((0, Some(1)), fit(2.0, 0.3, false))).collect();
        let h = param_histogram2d(&fits, 5, 5).unwrap();
        let cells: Vec<usize> = h.strata[0].counts.iter().flatten().copied().filter(|c| *c > 0).collect();
        assert_eq!(cells, vec![7]);
    }

    #[test]
    fn counts_are_conserved() {
        let mut fits = Vec::new();
        for i in 0..30 {
            let key = (i % 2, Some((i % 3 == 0) as u8));
            fits.push((key, fit(f64::from(i as u32) * 0.1, -f64::from(i as u32) * 0.05, i % 7 == 0)));
        }
        let h = param_histogram2d(&fits, 4, 6).unwrap();
        assert_eq!(h.strata.iter().map(StratumHistogram::total).sum::<usize>(), fits.len());
    }

    #[test]
    fn all_degenerate_stratum_is_an_error() {
        let fits = vec![((0, None), fit(1.0, 0.0, false)), ((1, None), fit(0.0, 0.0, true))];
        assert!(param_histogram2d(&fits, 3, 3).is_err());
    }
}
