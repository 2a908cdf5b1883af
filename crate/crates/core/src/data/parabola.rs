use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AttributedDataset, Record};
use crate::error::{Error, Result};
use crate::nd::Tensor;
use crate::rng;

/// Points `(t, t^2)` on a 1-d manifold embedded in the plane; the class is
/// `1` iff `t > t_split`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParabolaConfig {
    pub n: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub t_split: f64,
    /// Standard deviation of isotropic Gaussian observation noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ParabolaConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            t_min: -1.2,
            t_max: 1.2,
            t_split: 0.0,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl ParabolaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig("parabola needs n >= 2".into()));
        }
        if !(self.t_min < self.t_split && self.t_split < self.t_max) {
            return Err(Error::InvalidConfig("t_split must lie inside (t_min, t_max)".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig("noise must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn gen_parabola(cfg: &ParabolaConfig) -> Result<AttributedDataset> {
    cfg.validate()?;
    let mut r = rng::seeded(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut records = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let t: f64 = r.random_range(cfg.t_min..cfg.t_max);
        let (mut x1, mut x2) = (t, t * t);
        if cfg.noise > 0.0 {
            x1 += noise.sample(&mut r);
            x2 += noise.sample(&mut r);
        }
        records.push(Record {
            x: Tensor::vector(vec![x1, x2])?,
            y: usize::from(t > cfg.t_split),
            a: None,
        });
    }
    AttributedDataset::new(records, format!("parabola(seed={})", cfg.seed))
}

/// Euclidean distance from `p` to the curve `{(t, t^2)}` and the closest `t`.
///
/// Stationary points of `(t - p0)^2 + (t^2 - p1)^2` solve the depressed
/// cubic `t^3 + a t + b = 0` with `a = (1 - 2 p1) / 2`, `b = -p0 / 2`; every
/// real root is polished with Newton steps and the closest one wins.
pub fn parabola_distance(p: [f64; 2]) -> (f64, f64) {
    let a = (1.0 - 2.0 * p[1]) / 2.0;
    let b = -p[0] / 2.0;
    let mut roots = Vec::with_capacity(3);
    let disc = (b / 2.0).powi(2) + (a / 3.0).powi(3);
    if disc > 0.0 {
        let s = disc.sqrt();
        roots.push((-b / 2.0 + s).cbrt() + (-b / 2.0 - s).cbrt());
    } else if a < 0.0 {
        let m = 2.0 * (-a / 3.0).sqrt();
        let arg = ((3.0 * b) / (a * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        for k in 0..3 {
            roots.push(m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos());
        }
    } else {
        roots.push(0.0);
    }
    let dist2 = |t: f64| (t - p[0]).powi(2) + (t * t - p[1]).powi(2);
    let mut best = (f64::INFINITY, 0.0);
    for mut t in roots {
        for _ in 0..4 {
            let f = t * t * t + a * t + b;
            let df = 3.0 * t * t + a;
            if df.abs() > 1e-12 {
                t -= f / df;
            }
        }
        let d = dist2(t);
        if d < best.0 {
            best = (d, t);
        }
    }
    (best.0.sqrt(), best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_and_noiseless_points_lie_on_the_curve() {
        let cfg = ParabolaConfig {
            n: 200,
            seed: 3,
            ..Default::default()
        };
        let ds = gen_parabola(&cfg).unwrap();
        for r in ds.records() {
            let x = r.x.data();
            assert_eq!(x[1], x[0] * x[0]);
            assert_eq!(r.y, usize::from(x[0] > 0.0));
        }
        assert_eq!(parabola_distance([0.0, 0.0]).0, 0.0);
    }

    #[test]
    fn class_balance_on_symmetric_range() {
        let cfg = ParabolaConfig {
            n: 2000,
            seed: 11,
            ..Default::default()
        };
        let ds = gen_parabola(&cfg).unwrap();
        let frac = ds.labels().iter().sum::<usize>() as f64 / cfg.n as f64;
        assert!((frac - 0.5).abs() < 3.0 / (cfg.n as f64).sqrt(), "{frac}");
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ParabolaConfig {
            noise: 0.05,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(gen_parabola(&cfg).unwrap(), gen_parabola(&cfg).unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ParabolaConfig::default();
        cfg.t_split = 5.0;
        assert!(gen_parabola(&cfg).is_err());
        cfg = ParabolaConfig { n: 1, ..Default::default() };
        assert!(gen_parabola(&cfg).is_err());
    }

    #[test]
    fn distance_matches_dense_sampling() {
        let mut r = rng::seeded(1);
        for _ in 0..300 {
            let p = [r.random_range(-2.0..2.0), r.random_range(-1.0..3.0)];
            let (d, _) = parabola_distance(p);
            let brute = (0..=40_000)
                .map(|i| -4.0 + 8.0 * i as f64 / 40_000.0)
                .map(|t: f64| ((t - p[0]).powi(2) + (t * t - p[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= brute + 1e-12, "{p:?}: {d} vs {brute}");
            assert!(brute - d < 1e-6, "{p:?}: {d} vs {brute}");
        }
    }
}
