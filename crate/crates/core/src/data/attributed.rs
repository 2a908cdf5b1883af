//! Procedural grayscale images with two independently renderable binary
//! factors:
//!
//! * target label `y`: brightness of a horizontal band across the top rows;
//! * attribute `a`: a vertical bar in the lower region, on the left (`a = 0`)
//!   or on the right (`a = 1`).
//!
//! The pair `(y, a)` is drawn with `P(a == y) = (1 + rho) / 2` and
//! `P(y = 1) = 1/2`, which makes `rho` the Pearson correlation between them.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AttributedDataset, Record};
use crate::error::{Error, Result};
use crate::nd::Tensor;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticAttrConfig {
    /// Images are `size x size`.
    pub size: usize,
    pub n: usize,
    /// Correlation between `y` and `a`, in `[-1, 1]`.
    pub rho: f64,
    /// Per-pixel Gaussian noise standard deviation.
    pub noise: f64,
    pub seed: u64,
    /// Rows covered by the target-label band.
    #[serde(default = "default_band_rows")]
    pub band_rows: usize,
    /// Band brightness for `y = 0` and `y = 1`.
    #[serde(default = "default_band_levels")]
    pub band_levels: [f64; 2],
    #[serde(default = "default_bar_width")]
    pub bar_width: usize,
    #[serde(default = "default_bar_level")]
    pub bar_level: f64,
    /// Uniform jitter applied to band brightness and bar brightness.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_band_rows() -> usize {
    4
}
fn default_band_levels() -> [f64; 2] {
    [0.2, 0.8]
}
fn default_bar_width() -> usize {
    3
}
fn default_bar_level() -> f64 {
    0.9
}
fn default_jitter() -> f64 {
    0.1
}

const BACKGROUND: f64 = 0.1;

impl Default for SyntheticAttrConfig {
    fn default() -> Self {
        Self {
            size: 16,
            n: 1000,
            rho: 0.0,
            noise: 0.03,
            seed: 0,
            band_rows: default_band_rows(),
            band_levels: default_band_levels(),
            bar_width: default_bar_width(),
            bar_level: default_bar_level(),
            jitter: default_jitter(),
        }
    }
}

impl SyntheticAttrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidConfig("attributed dataset needs n >= 4".into()));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig("rho must lie in [-1, 1]".into()));
        }
        if self.size < 8 || self.band_rows + 3 >= self.size || self.bar_width * 3 > self.size {
            return Err(Error::InvalidConfig("image too small for band and bar".into()));
        }
        if !(self.noise >= 0.0 && self.jitter >= 0.0) {
            return Err(Error::InvalidConfig("noise and jitter must be >= 0".into()));
        }
        Ok(())
    }

    /// Left edge of the bar's nominal position for each attribute value.
    fn bar_columns(&self) -> [usize; 2] {
        let margin = self.size / 8;
        [margin, self.size - margin - self.bar_width]
    }
}

/// Renders one image for the given factors.
pub fn render(cfg: &SyntheticAttrConfig, y: usize, a: usize, r: &mut rng::Rng) -> Vec<f64> {
    let s = cfg.size;
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut img = vec![BACKGROUND; s * s];
    let band = cfg.band_levels[y] + r.random_range(-cfg.jitter..=cfg.jitter);
    for row in 0..cfg.band_rows {
        img[row * s..(row + 1) * s].fill(band);
    }
    let shift: i64 = r.random_range(-1..=1);
    let left = (cfg.bar_columns()[a] as i64 + shift).clamp(0, (s - cfg.bar_width) as i64) as usize;
    let bar = cfg.bar_level + r.random_range(-cfg.jitter..=cfg.jitter);
    for row in cfg.band_rows + 2..s - 1 {
        img[row * s + left..row * s + left + cfg.bar_width].fill(bar);
    }
    if cfg.noise > 0.0 {
        for p in &mut img {
            *p += noise.sample(r);
        }
    }
    for p in &mut img {
        *p = p.clamp(0.0, 1.0);
    }
    img
}

pub fn gen_attributed(cfg: &SyntheticAttrConfig) -> Result<AttributedDataset> {
    cfg.validate()?;
    let mut r = rng::seeded(cfg.seed);
    let agree = (1.0 + cfg.rho) / 2.0;
    let mut records = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let y = usize::from(r.random_bool(0.5));
        let a = if r.random_bool(agree) { y } else { 1 - y };
        let img = render(cfg, y, a, &mut r);
        records.push(Record {
            x: Tensor::vector(img)?,
            y,
            a: Some(a as u8),
        });
    }
    Ok(AttributedDataset::new(records, format!("attributed(rho={}, seed={})", cfg.rho, cfg.seed))?
        .with_image_shape(cfg.size, cfg.size))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(ds: &AttributedDataset) -> f64 {
        let y: Vec<f64> = ds.labels().iter().map(|v| *v as f64).collect();
        let a: Vec<f64> = ds.attributes().unwrap().iter().map(|v| *v as f64).collect();
        let n = y.len() as f64;
        let (my, ma) = (y.iter().sum::<f64>() / n, a.iter().sum::<f64>() / n);
        let cov: f64 = y.iter().zip(&a).map(|(p, q)| (p - my) * (q - ma)).sum::<f64>() / n;
        let sy = (y.iter().map(|p| (p - my).powi(2)).sum::<f64>() / n).sqrt();
        let sa = (a.iter().map(|q| (q - ma).powi(2)).sum::<f64>() / n).sqrt();
        cov / (sy * sa)
    }

    #[test]
    fn perfect_correlation() {
        let cfg = SyntheticAttrConfig {
            rho: 1.0,
            n: 300,
            seed: 4,
            ..Default::default()
        };
        let ds = gen_attributed(&cfg).unwrap();
        assert!(ds.records().iter().all(|r| r.a == Some(r.y as u8)));
    }

    #[test]
    fn independent_factors() {
        let cfg = SyntheticAttrConfig {
            n: 4000,
            seed: 8,
            ..Default::default()
        };
        let ds = gen_attributed(&cfg).unwrap();
        assert!(corr(&ds).abs() < 3.0 / (cfg.n as f64).sqrt(), "{}", corr(&ds));
    }

    #[test]
    fn pixels_in_unit_range_and_deterministic() {
        let cfg = SyntheticAttrConfig {
            n: 50,
            noise: 0.2,
            ..Default::default()
        };
        let ds = gen_attributed(&cfg).unwrap();
        assert_eq!(ds, gen_attributed(&cfg).unwrap());
        assert_eq!(ds.dim(), 256);
        assert!(ds.records().iter().all(|r| r.x.data().iter().all(|p| (0.0..=1.0).contains(p))));
    }

    #[test]
    fn factors_render_where_expected() {
        let cfg = SyntheticAttrConfig {
            noise: 0.0,
            jitter: 0.0,
            ..Default::default()
        };
        let mut r = rng::seeded(0);
        let img = render(&cfg, 1, 0, &mut r);
        let s = cfg.size;
        assert_eq!(img[0], 0.8);
        let bottom = 12 * s;
        let left: f64 = img[bottom..bottom + s / 2].iter().sum();
        let right: f64 = img[bottom + s / 2..bottom + s].iter().sum();
        assert!(left > right);
    }

    #[test]
    fn rejects_bad_rho() {
        let cfg = SyntheticAttrConfig {
            rho: 1.5,
            ..Default::default()
        };
        assert!(gen_attributed(&cfg).is_err());
    }
}
