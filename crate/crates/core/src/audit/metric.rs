//! Confounding metric: the fraction of exemplars whose oracle attribute
//! differs from the source record's attribute, overall and per stratum.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ProxyOracle;
use crate::data::AttributedDataset;
use crate::error::{Error, Result};
use crate::xgem::XGemResult;

/// Fraction of changed attributes in one cell. `y` and/or `a` are `None`
/// for marginal cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub y: Option<usize>,
    pub a: Option<u8>,
    pub count: usize,
    pub changed: usize,
    pub fraction: Option<f64>,
}

impl Stratum {
    fn new(y: Option<usize>, a: Option<u8>, count: usize, changed: usize) -> Self {
        Self {
            y,
            a,
            count,
            changed,
            fraction: (count > 0).then(|| changed as f64 / count as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingReport {
    pub overall: f64,
    pub included: usize,
    pub changed: usize,
    /// Records whose traversal never switched label.
    pub excluded_no_switch: usize,
    /// Records whose traversal returned an error.
    pub excluded_failed: usize,
    pub by_label: Vec<Stratum>,
    pub by_attribute: Vec<Stratum>,
    pub by_label_attribute: Vec<Stratum>,
    pub delta: f64,
    pub flagged: bool,
    pub assumptions: Vec<String>,
}

impl ConfoundingReport {
    pub fn cell(&self, y: usize, a: u8) -> Option<&Stratum> {
        self.by_label_attribute
            .iter()
            .find(|s| s.y == Some(y) && s.a == Some(a))
    }

    /// Joint cell with the largest fraction.
    pub fn most_affected(&self) -> Option<&Stratum> {
        self.by_label_attribute
            .iter()
            .filter(|s| s.fraction.is_some())
            .max_by(|p, q| p.fraction.partial_cmp(&q.fraction).expect("finite"))
    }
}

/// Evaluates the oracle on every switched exemplar. The oracle rule of the
/// exemplar's target label is used, since that is the label the classifier
/// assigns to it.
pub fn confounding_metric(
    results: &[Result<XGemResult>],
    oracle: &ProxyOracle,
    data: &AttributedDataset,
    delta: f64,
) -> Result<ConfoundingReport> {
    if results.len() != data.len() {
        return Err(Error::LengthMismatch {
            expected: data.len(),
            found: results.len(),
        });
    }
    let attrs = data.attributes()?;
    let (mut no_switch, mut failed) = (0, 0);
    // (y, a) -> (count, changed)
    let mut cells: BTreeMap<(usize, u8), (usize, usize)> = BTreeMap::new();
    for ((res, rec), a) in results.iter().zip(data.records()).zip(&attrs) {
        let r = match res {
            Ok(r) if r.trajectory.switch_index.is_some() => r,
            Ok(_) => {
                no_switch += 1;
                continue;
            }
            Err(_) => {
                failed += 1;
                continue;
            }
        };
        let a = *a as u8;
        let g = oracle.predict(&r.exemplar, r.trajectory.source.y_tar)?;
        let cell = cells.entry((rec.y, a)).or_default();
        cell.0 += 1;
        cell.1 += usize::from(g != a);
    }
    let included: usize = cells.values().map(|c| c.0).sum();
    if included == 0 {
        return Err(Error::Empty("no switched exemplars to evaluate".into()));
    }
    let changed: usize = cells.values().map(|c| c.1).sum();
    let marginal = |key: &dyn Fn(&(usize, u8)) -> bool| {
        cells
            .iter()
            .filter(|(k, _)| key(k))
            .fold((0, 0), |(n, c), (_, v)| (n + v.0, c + v.1))
    };
    let mut labels: Vec<usize> = cells.keys().map(|k| k.0).collect();
    labels.dedup();
    let by_label = labels
        .iter()
        .map(|y| {
            let (n, c) = marginal(&|k| k.0 == *y);
            Stratum::new(Some(*y), None, n, c)
        })
        .collect();
    let by_attribute = [0u8, 1]
        .iter()
        .map(|a| {
            let (n, c) = marginal(&|k| k.1 == *a);
            Stratum::new(None, Some(*a), n, c)
        })
        .collect();
    let by_label_attribute = labels
        .iter()
        .flat_map(|y| [0u8, 1].map(|a| (*y, a)))
        .map(|(y, a)| {
            let (n, c) = cells.get(&(y, a)).copied().unwrap_or_default();
            Stratum::new(Some(y), Some(a), n, c)
        })
        .collect();
    let overall = changed as f64 / included as f64;
    Ok(ConfoundingReport {
        overall,
        included,
        changed,
        excluded_no_switch: no_switch,
        excluded_failed: failed,
        by_label,
        by_attribute,
        by_label_attribute,
        delta,
        flagged: overall > delta,
        assumptions: vec!["the attribute oracle is assumed not to be confounded by the target label".into()],
    })
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |f| format!("{f:.6}"))
}

/// One row per classifier: the overall metric.
pub fn overall_table_csv(reports: &[(&str, &ConfoundingReport)]) -> String {
    let mut out = String::from("classifier,confounding_metric,included,excluded\n");
    for (name, r) in reports {
        let _ = writeln!(
            out,
            "{name},{:.6},{},{}",
            r.overall,
            r.included,
            r.excluded_no_switch + r.excluded_failed
        );
    }
    out
}

/// Rows are (classifier, attribute); columns are target labels.
pub fn stratified_table_csv(reports: &[(&str, &ConfoundingReport)]) -> String {
    let mut labels: Vec<usize> = reports
        .iter()
        .flat_map(|(_, r)| r.by_label.iter().filter_map(|s| s.y))
        .collect();
    labels.sort_unstable();
    labels.dedup();
    let mut out = String::from("classifier,attribute");
    for y in &labels {
        let _ = write!(out, ",y={y}");
    }
    out.push('\n');
    for (name, r) in reports {
        for a in [0u8, 1] {
            let _ = write!(out, "{name},a={a}");
            for y in &labels {
                let _ = write!(out, ",{}", fmt(r.cell(*y, a).and_then(|s| s.fraction)));
            }
            out.push('\n');
        }
    }
    out
}
