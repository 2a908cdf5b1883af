//! Directory export of a dataset.
//!
//! ```text
//! manifest.json   provenance, counts, image shape, generator config, seed
//! features.bin    n x d little-endian f64, row-major
//! labels.bin      n x (u32 LE label, u8 attribute; 255 when absent)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttributedDataset, Record};
use crate::error::{Error, Result};
use crate::nd::Tensor;

const FEATURES: &str = "features.bin";
const LABELS: &str = "labels.bin";
const MANIFEST: &str = "manifest.json";
const NO_ATTRIBUTE: u8 = 255;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub provenance: String,
    pub count: usize,
    pub dim: usize,
    pub image_shape: Option<[usize; 2]>,
    /// Generator config that produced the data, if any.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub features_file: String,
    pub labels_file: String,
}

pub fn export_dataset(
    ds: &AttributedDataset,
    dir: impl AsRef<Path>,
    config: serde_json::Value,
    seed: Option<u64>,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut features = Vec::with_capacity(ds.len() * ds.dim() * 8);
    let mut labels = Vec::with_capacity(ds.len() * 5);
    for r in ds.records() {
        for v in r.x.data() {
            features.extend_from_slice(&v.to_le_bytes());
        }
        labels.extend_from_slice(&(r.y as u32).to_le_bytes());
        labels.push(r.a.unwrap_or(NO_ATTRIBUTE));
    }
    let manifest = DatasetManifest {
        provenance: ds.provenance().to_string(),
        count: ds.len(),
        dim: ds.dim(),
        image_shape: ds.image_shape(),
        config,
        seed,
        features_file: FEATURES.into(),
        labels_file: LABELS.into(),
    };
    fs::write(dir.join(FEATURES), features)?;
    fs::write(dir.join(LABELS), labels)?;
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn import_dataset(dir: impl AsRef<Path>) -> Result<(AttributedDataset, DatasetManifest)> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&path)?)?;
    let features = fs::read(dir.join(&manifest.features_file))?;
    let labels = fs::read(dir.join(&manifest.labels_file))?;
    let (n, d) = (manifest.count, manifest.dim);
    if features.len() != n * d * 8 {
        return Err(Error::LengthMismatch {
            expected: n * d * 8,
            found: features.len(),
        });
    }
    if labels.len() != n * 5 {
        return Err(Error::LengthMismatch {
            expected: n * 5,
            found: labels.len(),
        });
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let x: Vec<f64> = features[i * d * 8..(i + 1) * d * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let l = &labels[i * 5..(i + 1) * 5];
        let y = u32::from_le_bytes(l[..4].try_into().expect("4 bytes")) as usize;
        let a = (l[4] != NO_ATTRIBUTE).then_some(l[4]);
        records.push(Record {
            x: Tensor::vector(x)?,
            y,
            a,
        });
    }
    let mut ds = AttributedDataset::new(records, manifest.provenance.clone())?;
    if let Some([r, c]) = manifest.image_shape {
        ds = ds.with_image_shape(r, c);
    }
    Ok((ds, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_attributed, gen_parabola, ParabolaConfig, SyntheticAttrConfig};

    #[test]
    fn roundtrip_is_exact() {
        let cfg = SyntheticAttrConfig {
            n: 20,
            seed: 2,
            ..Default::default()
        };
        let ds = gen_attributed(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = export_dataset(&ds, dir.path(), serde_json::to_value(&cfg).unwrap(), Some(2)).unwrap();
        let (back, m2) = import_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(m, m2);

        let p = gen_parabola(&ParabolaConfig {
            n: 10,
            noise: 0.1,
            ..Default::default()
        })
        .unwrap();
        export_dataset(&p, dir.path().join("p"), serde_json::Value::Null, None).unwrap();
        assert_eq!(import_dataset(dir.path().join("p")).unwrap().0, p);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let ds = gen_parabola(&ParabolaConfig {
            n: 4,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&ds, dir.path(), serde_json::Value::Null, None).unwrap();
        let f = dir.path().join(FEATURES);
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(import_dataset(dir.path()), Err(Error::LengthMismatch { .. })));
    }
}
