//! Attribute oracle with per-target-group randomized threshold rules, and
//! the equalized-odds post-processing that fits those rules.
//!
//! For target group `y` the rule outputs `a = 1` with probability
//!
//! ```text
//! P(g = 1 | s) = (1 - p_flip_pos)  if s >= t_y
//!                p_flip_neg        otherwise
//! ```
//!
//! where `s` is the base classifier's probability for `a = 1`. In ROC
//! coordinates `(FPR, TPR)` the rule sits at
//! `alpha * A(t) + beta * (1, 1) + gamma * (0, 0)` with `A(t)` the plain
//! threshold point, `beta = p_flip_neg` and `gamma = p_flip_pos`. The set
//! of points a group can reach is therefore the union over thresholds of
//! the triangles `conv{(0,0), (1,1), A(t)}`; equalized odds asks for one
//! point reachable by both groups.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::AttributedDataset;
use crate::error::{Error, Result};
use crate::nd::Tensor;
use crate::nn::{BlackBox, Classifier};
use crate::rng;

/// Threshold grid spacing used by the recalibration search.
pub const GRID_STEP: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRule {
    pub threshold: f64,
    /// Probability of turning a positive threshold decision into `a = 0`.
    pub p_flip_pos: f64,
    /// Probability of turning a negative threshold decision into `a = 1`.
    pub p_flip_neg: f64,
}

impl GroupRule {
    pub const IDENTITY: Self = Self {
        threshold: 0.5,
        p_flip_pos: 0.0,
        p_flip_neg: 0.0,
    };

    /// `P(g = 1)` for base score `s`.
    pub fn prob_positive(&self, s: f64) -> f64 {
        if s >= self.threshold {
            1.0 - self.p_flip_pos
        } else {
            self.p_flip_neg
        }
    }

    fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if unit(self.threshold) && unit(self.p_flip_pos) && unit(self.p_flip_neg) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("oracle rule outside [0, 1]: {self:?}")))
        }
    }
}

/// Expected error rates of an oracle on one target group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub y: usize,
    pub fpr: f64,
    pub fnr: f64,
    pub accuracy: f64,
    pub negatives: usize,
    pub positives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRates {
    pub groups: Vec<GroupRates>,
    pub accuracy: f64,
    pub fpr_gap: f64,
    pub fnr_gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxyOracle {
    base: Classifier,
    rules: Vec<GroupRule>,
    seed: u64,
}

impl ProxyOracle {
    /// One rule per target group, indexed by the target label.
    pub fn new(base: Classifier, rules: Vec<GroupRule>, seed: u64) -> Result<Self> {
        if base.num_classes() != 2 {
            return Err(Error::InvalidConfig("the attribute classifier must be binary".into()));
        }
        for r in &rules {
            r.validate()?;
        }
        Ok(Self { base, rules, seed })
    }

    pub fn identity(base: Classifier, groups: usize, seed: u64) -> Result<Self> {
        Self::new(base, vec![GroupRule::IDENTITY; groups], seed)
    }

    pub fn base(&self) -> &Classifier {
        &self.base
    }

    pub fn rules(&self) -> &[GroupRule] {
        &self.rules
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn rule(&self, group: usize) -> Result<&GroupRule> {
        self.rules.get(group).ok_or(Error::InvalidClass {
            index: group,
            classes: self.rules.len(),
        })
    }

    /// Base probability of `a = 1`.
    pub fn score(&self, x: &Tensor) -> Result<f64> {
        Ok(self.base.predict_proba(x)?.data()[1])
    }

    /// `P(g(x) = 1)` under the rule of `group`.
    pub fn prob_positive(&self, x: &Tensor, group: usize) -> Result<f64> {
        Ok(self.rule(group)?.prob_positive(self.score(x)?))
    }

    /// Draws the oracle's attribute for `x`. The draw is keyed on the
    /// content of `x`, so it does not depend on evaluation order.
    pub fn predict(&self, x: &Tensor, group: usize) -> Result<u8> {
        let p = self.prob_positive(x, group)?;
        let key = rng::derive(self.seed, rng::hash_values(x.data()) ^ group as u64);
        let u: f64 = rng::seeded(key).random();
        Ok(u8::from(u < p))
    }

    /// Expected rates on `data`, grouped by target label.
    pub fn rates(&self, data: &AttributedDataset) -> Result<OracleRates> {
        let scores = scores_of(&self.base, data)?;
        rates_from_scores(&self.rules, &scores, &data.labels(), &data.attributes()?)
    }
}

/// Expected rates of `rules` given base scores, target labels and true
/// attributes.
pub fn rates_from_scores(rules: &[GroupRule], scores: &[f64], labels: &[usize], attrs: &[usize]) -> Result<OracleRates> {
    let groups = group_scores(labels, attrs, scores, rules.len())?;
    Ok(summarize(
        groups
            .iter()
            .enumerate()
            .map(|(y, g)| g.rates(y, rules[y]))
            .collect(),
    ))
}

fn summarize(groups: Vec<GroupRates>) -> OracleRates {
    let total: usize = groups.iter().map(|g| g.negatives + g.positives).sum();
    let accuracy = groups
        .iter()
        .map(|g| g.accuracy * (g.negatives + g.positives) as f64)
        .sum::<f64>()
        / total as f64;
    let spread = |f: fn(&GroupRates) -> f64| {
        let (lo, hi) = groups
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        hi - lo
    };
    OracleRates {
        fpr_gap: spread(|g| g.fpr),
        fnr_gap: spread(|g| g.fnr),
        accuracy,
        groups,
    }
}

fn scores_of(base: &Classifier, data: &AttributedDataset) -> Result<Vec<f64>> {
    let p = base.predict_proba(&data.features()?)?;
    Ok((0..data.len()).map(|i| p.row(i)[1]).collect())
}

/// Base scores of one target group split by true attribute.
struct GroupScores {
    neg: Vec<f64>,
    pos: Vec<f64>,
}

impl GroupScores {
    fn rates(&self, y: usize, rule: GroupRule) -> GroupRates {
        let fpr = self.neg.iter().map(|s| rule.prob_positive(*s)).sum::<f64>() / self.neg.len() as f64;
        let tpr = self.pos.iter().map(|s| rule.prob_positive(*s)).sum::<f64>() / self.pos.len() as f64;
        let (n0, n1) = (self.neg.len() as f64, self.pos.len() as f64);
        GroupRates {
            y,
            fpr,
            fnr: 1.0 - tpr,
            accuracy: (n0 * (1.0 - fpr) + n1 * tpr) / (n0 + n1),
            negatives: self.neg.len(),
            positives: self.pos.len(),
        }
    }

    /// `(FPR, TPR)` of the plain rule `s >= t`.
    fn roc(&self, t: f64) -> [f64; 2] {
        let frac = |v: &[f64]| v.iter().filter(|s| **s >= t).count() as f64 / v.len() as f64;
        [frac(&self.neg), frac(&self.pos)]
    }
}

fn group_scores(labels: &[usize], attrs: &[usize], scores: &[f64], groups: usize) -> Result<Vec<GroupScores>> {
    if labels.len() != scores.len() || attrs.len() != scores.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            found: labels.len().min(attrs.len()),
        });
    }
    let mut out: Vec<GroupScores> = (0..groups)
        .map(|_| GroupScores {
            neg: Vec::new(),
            pos: Vec::new(),
        })
        .collect();
    for ((y, a), s) in labels.iter().zip(attrs).zip(scores) {
        let g = out.get_mut(*y).ok_or(Error::InvalidClass {
            index: *y,
            classes: groups,
        })?;
        if *a == 1 {
            g.pos.push(*s);
        } else {
            g.neg.push(*s);
        }
    }
    for (y, g) in out.iter().enumerate() {
        if g.neg.is_empty() || g.pos.is_empty() {
            return Err(Error::Infeasible(format!(
                "target group {y} lacks one attribute value in the validation set"
            )));
        }
    }
    Ok(out)
}

type Point = [f64; 2];

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise triangle `(0,0), (1,1), a`, or `None` when `a` lies on
/// the diagonal.
fn triangle(a: Point) -> Option<[Point; 3]> {
    let tri = [[0.0, 0.0], [1.0, 1.0], a];
    let c = cross(tri[0], tri[1], tri[2]);
    if c.abs() < 1e-15 {
        None
    } else if c > 0.0 {
        Some(tri)
    } else {
        Some([tri[0], tri[2], tri[1]])
    }
}

/// Clips a convex polygon by a counter-clockwise convex polygon.
fn clip(subject: &[Point], clipper: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    for i in 0..clipper.len() {
        if out.is_empty() {
            break;
        }
        let (p, q) = (clipper[i], clipper[(i + 1) % clipper.len()]);
        let inside = |v: Point| cross(p, q, v) >= -1e-12;
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (cur, prev) = (input[j], input[(j + input.len() - 1) % input.len()]);
            let (ci, pi) = (inside(cur), inside(prev));
            if ci != pi {
                let (d1, d2) = (cross(p, q, prev), cross(p, q, cur));
                let t = d1 / (d1 - d2);
                out.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out
}

/// Rule for one group that realises ROC point `p` from threshold point `a`.
fn rule_for(threshold: f64, a: Point, p: Point) -> GroupRule {
    let det = a[0] - a[1];
    let (alpha, beta) = if det.abs() < 1e-15 {
        (0.0, p[0])
    } else {
        let alpha = (p[0] - p[1]) / det;
        (alpha, p[0] - alpha * a[0])
    };
    let alpha = alpha.clamp(0.0, 1.0);
    let beta = beta.clamp(0.0, 1.0 - alpha);
    GroupRule {
        threshold,
        p_flip_pos: (1.0 - alpha - beta).clamp(0.0, 1.0),
        p_flip_neg: beta,
    }
}

/// Recalibrated oracle plus the rates before and after.
#[derive(Clone, Debug)]
pub struct Recalibration {
    pub oracle: ProxyOracle,
    pub before: OracleRates,
    pub after: OracleRates,
}

/// Fits per-group randomized rules for two target groups so that FPR and
/// FNR agree across groups within `tol` while keeping accuracy maximal.
/// A base classifier that already meets the tolerance keeps the identity
/// rule.
pub fn recalibrate_equalized_odds(
    base: &Classifier,
    val: &AttributedDataset,
    tau: f64,
    tol: f64,
    seed: u64,
) -> Result<Recalibration> {
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scores = scores_of(base, val)?;
    let (rules, before, after) = equalized_odds_rules(&scores, &val.labels(), &val.attributes()?, tau, tol)?;
    Ok(Recalibration {
        oracle: ProxyOracle::new(base.clone(), rules, seed)?,
        before,
        after,
    })
}

/// Score-level core of [`recalibrate_equalized_odds`]: returns the rules
/// and the expected rates before and after.
pub fn equalized_odds_rules(
    scores: &[f64],
    labels: &[usize],
    attrs: &[usize],
    tau: f64,
    tol: f64,
) -> Result<(Vec<GroupRule>, OracleRates, OracleRates)> {
    let groups = group_scores(labels, attrs, scores, 2)?;
    let before = rates_from_scores(&[GroupRule::IDENTITY; 2], scores, labels, attrs)?;
    let rules = if before.fpr_gap <= tol && before.fnr_gap <= tol {
        vec![GroupRule::IDENTITY; 2]
    } else {
        equalize(&groups)?
    };
    for r in &rules {
        r.validate()?;
    }
    let after = rates_from_scores(&rules, scores, labels, attrs)?;
    if after.fpr_gap > tol || after.fnr_gap > tol {
        return Err(Error::Infeasible(format!(
            "rate gaps after recalibration: fpr {:.4}, fnr {:.4}",
            after.fpr_gap, after.fnr_gap
        )));
    }
    if after.accuracy <= tau {
        return Err(Error::AccuracyBelowTau {
            accuracy: after.accuracy,
            tau,
        });
    }
    Ok((rules, before, after))
}

/// Distinct threshold ROC points of a group on the search grid.
fn roc_points(g: &GroupScores) -> Vec<(f64, Point)> {
    let steps = (1.0 / GRID_STEP).round() as usize;
    let mut out: Vec<(f64, Point)> = Vec::new();
    for i in 0..=steps {
        let t = i as f64 * GRID_STEP;
        let a = g.roc(t);
        if out.last().is_none_or(|(_, prev)| *prev != a) {
            out.push((t, a));
        }
    }
    out
}

fn equalize(groups: &[GroupScores]) -> Result<Vec<GroupRule>> {
    let counts: Vec<(f64, f64)> = groups
        .iter()
        .map(|g| (g.neg.len() as f64, g.pos.len() as f64))
        .collect();
    // Expected errors at a shared ROC point p: sum_y n0_y * p.x + n1_y * (1 - p.y).
    let (n0, n1) = counts.iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let errors = |p: Point| n0 * p[0] + n1 * (1.0 - p[1]);
    let rocs: Vec<Vec<(f64, Point)>> = groups.iter().map(roc_points).collect();

    // The diagonal endpoints are reachable by every group.
    let mut best: Option<(f64, Point, usize, usize)> = None;
    let mut consider = |p: Point, i: usize, j: usize| {
        let e = errors(p);
        if best.is_none_or(|(b, ..)| e < b - 1e-12) {
            best = Some((e, p, i, j));
        }
    };
    for corner in [[0.0, 0.0], [1.0, 1.0]] {
        consider(corner, 0, 0);
    }
    for (i, (_, a0)) in rocs[0].iter().enumerate() {
        let Some(t0) = triangle(*a0) else { continue };
        for (j, (_, a1)) in rocs[1].iter().enumerate() {
            let Some(t1) = triangle(*a1) else { continue };
            for p in clip(&t0, &t1) {
                consider([p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)], i, j);
            }
        }
    }
    let (_, p, i, j) = best.ok_or_else(|| Error::Infeasible("no shared operating point".into()))?;
    let (t0, a0) = rocs[0][i];
    let (t1, a1) = rocs[1][j];
    Ok(vec![rule_for(t0, a0, p), rule_for(t1, a1, p)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_two_triangles() {
        let a = triangle([0.1, 0.9]).unwrap();
        let b = triangle([0.3, 0.6]).unwrap();
        let mut poly = clip(&a, &b);
        poly.dedup_by(|p, q| (p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        // b lies inside a, so the intersection is b itself (shared edges
        // may repeat vertices).
        assert!(poly.len() >= 3);
        for v in b {
            assert!(poly.iter().any(|p| (p[0] - v[0]).abs() < 1e-12 && (p[1] - v[1]).abs() < 1e-12));
        }
    }

    #[test]
    fn rule_recovers_target_point() {
        let g = GroupScores {
            neg: vec![0.1, 0.2, 0.6, 0.3],
            pos: vec![0.9, 0.7, 0.4, 0.8],
        };
        let a = g.roc(0.5);
        let p = [0.5 * a[0] + 0.2, 0.5 * a[1] + 0.2];
        let r = rule_for(0.5, a, p);
        let rates = g.rates(0, r);
        assert!((rates.fpr - p[0]).abs() < 1e-12);
        assert!((1.0 - rates.fnr - p[1]).abs() < 1e-12);
    }
}
